import json

import numpy as np
import pytest
import torch
from PIL import Image


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A seeded, randomly initialized ViT saved locally: deterministic
    weights with no network access."""
    from transformers import ViTConfig, ViTModel

    config = ViTConfig(
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        image_size=64,
        patch_size=16,
    )
    torch.manual_seed(1234)
    model = ViTModel(config)
    path = tmp_path_factory.mktemp("checkpoint") / "tiny-vit"
    model.save_pretrained(path)
    return path


def make_image(path, width, height, seed):
    rng = np.random.default_rng(seed)
    base = np.linspace(0, 255, width, dtype=np.uint8)
    img = np.zeros((height, width, 3), dtype=np.uint8)
    img[:, :, 0] = base[None, :]
    img[:, :, 1] = np.linspace(0, 255, height, dtype=np.uint8)[:, None]
    img[:, :, 2] = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    Image.fromarray(img).save(path)
    return path


@pytest.fixture(scope="session")
def manifest_dir(tmp_path_factory):
    """Two session images (896x448 -> 4x2 tiles of 224) plus berry boxes."""
    root = tmp_path_factory.mktemp("data")
    make_image(root / "r1_0612.png", 896, 448, seed=0)
    make_image(root / "r1_0715.png", 896, 448, seed=1)
    manifest = {
        "season_start": "2024-06-01",
        "span_days": 108,
        "class_names": ["A", "B"],
        "images": [
            {
                "path": "r1_0612.png",
                "date": "2024-06-12",
                "region_id": "r1",
                "variety": "A",
                "fungicide": False,
                "berries": [
                    {"berry_id": "r1-b1", "box": [10, 10, 90, 90], "rot": False},
                    {"berry_id": "r1-b2", "box": [300, 100, 420, 220], "rot": True},
                ],
            },
            {
                "path": "r1_0715.png",
                "date": "2024-07-15",
                "region_id": "r1",
                "variety": "A",
                "fungicide": False,
                "berries": [
                    {"berry_id": "r1-b1", "box": [12, 14, 92, 94], "rot": True},
                ],
            },
        ],
    }
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root
