"""Frozen backbone registry and feature extraction.

Each supported backbone family pairs a transformers model class with its
published preprocessing constants and a rule for reading out the summary
vector: the classifier token after the final normalization layer where
one exists (ViT, DINOv2), the attention-pooled head for SigLIP, and the
mean-pooled normalized final states for Swin, which has no classifier
token. A local checkpoint directory may stand in for the default hub id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image


class BackboneError(ValueError):
    """Unknown backbone name or unloadable checkpoint."""


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
HALF_MEAN = (0.5, 0.5, 0.5)
HALF_STD = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    default_checkpoint: str
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    readout: str  # "cls" | "pool" | "pooler"


REGISTRY = {
    "vit": BackboneSpec("vit", "google/vit-base-patch16-224", HALF_MEAN, HALF_STD, "cls"),
    "dinov2": BackboneSpec("dinov2", "facebook/dinov2-base", IMAGENET_MEAN, IMAGENET_STD, "cls"),
    "swin": BackboneSpec(
        "swin", "microsoft/swin-base-patch4-window7-224", IMAGENET_MEAN, IMAGENET_STD, "pool"
    ),
    "siglip": BackboneSpec(
        "siglip", "google/siglip-base-patch16-224", HALF_MEAN, HALF_STD, "pooler"
    ),
}


def _model_class(name: str):
    import transformers

    return {
        "vit": transformers.ViTModel,
        "dinov2": transformers.Dinov2Model,
        "swin": transformers.SwinModel,
        "siglip": transformers.SiglipVisionModel,
    }[name]


@dataclass
class Backbone:
    spec: BackboneSpec
    model: "torch.nn.Module"
    checkpoint: str

    @property
    def input_size(self) -> int:
        return int(self.model.config.image_size)

    @property
    def feature_dim(self) -> int:
        return int(self.model.config.hidden_size)

    def describe(self) -> str:
        return f"{self.spec.name}:{self.checkpoint}"


def load_backbone(name: str, checkpoint: str | None = None) -> Backbone:
    """Load a frozen backbone by family name.

    ``checkpoint`` may be a hub id or a local directory; it defaults to
    the family's published checkpoint.
    """
    key = name.lower()
    if key not in REGISTRY:
        raise BackboneError(
            f"unknown backbone {name!r}; expected one of {sorted(REGISTRY)}"
        )
    spec = REGISTRY[key]
    source = checkpoint or spec.default_checkpoint
    try:
        model = _model_class(key).from_pretrained(source)
    except Exception as exc:
        raise BackboneError(f"cannot load {key} weights from {source!r}: {exc}") from exc
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return Backbone(spec=spec, model=model, checkpoint=str(source))


def preprocess(backbone: Backbone, crops: list[np.ndarray]) -> torch.Tensor:
    """Resize uint8 RGB crops to the model input and normalize."""
    size = backbone.input_size
    mean = torch.tensor(backbone.spec.mean).view(3, 1, 1)
    std = torch.tensor(backbone.spec.std).view(3, 1, 1)
    batch = []
    for crop in crops:
        img = Image.fromarray(crop)
        if img.size != (size, size):
            img = img.resize((size, size), Image.Resampling.BILINEAR)
        x = torch.from_numpy(np.array(img)).permute(2, 0, 1).float() / 255.0
        batch.append((x - mean) / std)
    return torch.stack(batch)


def extract_features(
    crops: list[np.ndarray], backbone: Backbone, batch_size: int = 16
) -> np.ndarray:
    """Summary vector per crop, in input order, as float32 (n, dim)."""
    if not crops:
        return np.zeros((0, backbone.feature_dim), dtype=np.float32)
    outputs = []
    with torch.no_grad():
        for start in range(0, len(crops), batch_size):
            pixel_values = preprocess(backbone, crops[start : start + batch_size])
            result = backbone.model(pixel_values=pixel_values)
            if backbone.spec.readout == "cls":
                vec = result.last_hidden_state[:, 0]
            elif backbone.spec.readout == "pool":
                vec = result.last_hidden_state.mean(dim=1)
            else:
                vec = result.pooler_output
            outputs.append(vec.cpu().numpy().astype(np.float32))
    return np.concatenate(outputs)
