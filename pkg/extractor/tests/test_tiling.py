import numpy as np
from PIL import Image

from cropextract.tiling import SPATIAL_LEFT, SPATIAL_NONE, SPATIAL_RIGHT, tile_image


def blank(width, height):
    return Image.fromarray(np.zeros((height, width, 3), dtype=np.uint8))


def test_exact_grid_count():
    tiles = tile_image(blank(896, 448), 224)
    assert len(tiles) == 8
    assert {(t.grid_x, t.grid_y) for t in tiles} == {
        (x, y) for x in range(4) for y in range(2)
    }


def test_edge_remainder_dropped():
    assert len(tile_image(blank(900, 448), 224)) == 8
    assert len(tile_image(blank(1000, 500), 224)) == 8


def test_midline_tags_even_width():
    tiles = tile_image(blank(896, 224), 224)
    tags = {t.grid_x: t.spatial_tag for t in tiles}
    assert tags[0] == SPATIAL_LEFT
    assert tags[1] == SPATIAL_LEFT
    assert tags[2] == SPATIAL_RIGHT
    assert tags[3] == SPATIAL_RIGHT


def test_midline_straddle_odd_width():
    tiles = tile_image(blank(224 * 3, 224), 224)
    tags = {t.grid_x: t.spatial_tag for t in tiles}
    assert tags[0] == SPATIAL_LEFT
    assert tags[1] == SPATIAL_NONE
    assert tags[2] == SPATIAL_RIGHT


def test_image_smaller_than_tile():
    assert tile_image(blank(200, 200), 224) == []


def test_tile_pixels_match_source():
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(448, 448, 3), dtype=np.uint8)
    tiles = tile_image(Image.fromarray(raw), 224)
    for tile in tiles:
        x0, y0 = tile.grid_x * 224, tile.grid_y * 224
        assert np.array_equal(tile.pixels, raw[y0 : y0 + 224, x0 : x0 + 224])
