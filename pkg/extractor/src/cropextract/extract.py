"""Extraction pipeline: manifest -> tiles and berry crops -> TLTF files."""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import Backbone, extract_features
from .manifest import ExtractionManifest
from .tiling import SPATIAL_NONE, crop_box, tile_image
from .tltf_writer import OutRecord, dump_tltf


def stable_track_id(*parts) -> int:
    """32-bit track id from a stable content hash of the identity parts."""
    digest = hashlib.blake2b(
        ":".join(str(p) for p in parts).encode("utf-8"), digest_size=4
    ).digest()
    return int.from_bytes(digest, "little")


def _session_order(manifest: ExtractionManifest) -> dict[float, int]:
    days = sorted({img.day_index for img in manifest.images})
    return {day: i for i, day in enumerate(days)}


def write_dataset(
    manifest: ExtractionManifest,
    backbone: Backbone,
    out_dir: Path,
    patch_size: int = 224,
    batch_size: int = 16,
) -> dict[str, Path]:
    """Run the backbone over every tile and berry crop, then emit one
    TLTF file per scale. Returns the written paths keyed by scale."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sessions = _session_order(manifest)

    patch_records: list[OutRecord] = []
    berry_records: list[OutRecord] = []
    for entry in sorted(manifest.images, key=lambda e: (e.day_index, str(e.path))):
        image = Image.open(entry.path)
        session = sessions[entry.day_index]
        time_norm = float(np.float32(entry.day_index / manifest.span_days))

        tiles = tile_image(image, patch_size)
        if not tiles:
            print(
                f"warning: {entry.path} smaller than one {patch_size}px tile, skipped",
                file=sys.stderr,
            )
        else:
            vectors = extract_features([t.pixels for t in tiles], backbone, batch_size)
            for tile, vec in zip(tiles, vectors):
                patch_records.append(
                    OutRecord(
                        track_id=stable_track_id(entry.region_id, tile.grid_x, tile.grid_y),
                        session_index=session,
                        time_norm=time_norm,
                        variety_id=entry.variety_id,
                        fungicide=entry.fungicide,
                        spatial_tag=tile.spatial_tag,
                        features=vec,
                    )
                )

        if entry.berries:
            crops = [crop_box(image, b.box) for b in entry.berries]
            vectors = extract_features(crops, backbone, batch_size)
            for berry, vec in zip(entry.berries, vectors):
                berry_records.append(
                    OutRecord(
                        track_id=stable_track_id("berry", berry.berry_id),
                        session_index=session,
                        time_norm=time_norm,
                        variety_id=entry.variety_id,
                        fungicide=entry.fungicide,
                        spatial_tag=SPATIAL_NONE,
                        features=vec,
                        rot=berry.rot,
                    )
                )

    written: dict[str, Path] = {}
    for scale, records, filename in (
        ("patch", patch_records, "patches.tltf"),
        ("berry", berry_records, "berries.tltf"),
    ):
        if not records:
            continue
        blob = dump_tltf(
            records,
            feature_dim=backbone.feature_dim,
            span_days=manifest.span_days,
            class_names=manifest.class_names,
            backbone=backbone.describe(),
            scale=scale,
        )
        path = out_dir / filename
        path.write_bytes(blob)
        written[scale] = path
        print(f"wrote {len(records)} {scale} records ({backbone.feature_dim}-dim) to {path}")
    return written
