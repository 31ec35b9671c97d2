"""Grid tiling of region images into fixed-size patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

SPATIAL_LEFT = 0
SPATIAL_RIGHT = 1
SPATIAL_NONE = 2


@dataclass
class Tile:
    pixels: np.ndarray  # (patch, patch, 3) uint8
    grid_x: int
    grid_y: int
    spatial_tag: int


def tile_image(image: Image.Image, patch_size: int) -> list[Tile]:
    """Cut a non-overlapping patch grid, dropping partial edge tiles.

    Tiles entirely left of the image midline are tagged Left, entirely
    right of it Right; a tile straddling the midline (odd grid widths)
    gets no side.
    """
    width, height = image.size
    cols = width // patch_size
    rows = height // patch_size
    if cols == 0 or rows == 0:
        return []
    rgb = np.asarray(image.convert("RGB"))
    midline = width / 2.0
    tiles = []
    for gy in range(rows):
        for gx in range(cols):
            x0, y0 = gx * patch_size, gy * patch_size
            if (gx + 1) * patch_size <= midline:
                tag = SPATIAL_LEFT
            elif x0 >= midline:
                tag = SPATIAL_RIGHT
            else:
                tag = SPATIAL_NONE
            tiles.append(
                Tile(
                    pixels=rgb[y0 : y0 + patch_size, x0 : x0 + patch_size],
                    grid_x=gx,
                    grid_y=gy,
                    spatial_tag=tag,
                )
            )
    return tiles


def crop_box(image: Image.Image, box: tuple[int, int, int, int]) -> np.ndarray:
    """Clamp a berry bounding box to the image and return its pixels."""
    width, height = image.size
    x0 = max(0, min(box[0], width - 1))
    y0 = max(0, min(box[1], height - 1))
    x1 = max(x0 + 1, min(box[2], width))
    y1 = max(y0 + 1, min(box[3], height))
    return np.asarray(image.convert("RGB"))[y0:y1, x0:x1]
