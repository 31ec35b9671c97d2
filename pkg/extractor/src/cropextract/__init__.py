"""Frozen vision-transformer feature extraction to TLTF files."""

from .backbones import Backbone, BackboneError, extract_features, load_backbone
from .extract import stable_track_id, write_dataset
from .manifest import ExtractionManifest, ManifestError, load_manifest
from .tiling import Tile, crop_box, tile_image

__version__ = "0.1.0"
