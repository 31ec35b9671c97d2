"""Static SVG export of embedded points and rollout overlays.

Hand-rolled SVG keeps the output deterministic and trivially countable:
one <circle> per scatter point, one <polyline> per rollout.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

CLASS_PALETTE = (
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
    "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
)
COLOR_KEYS = ("time", "variety", "fungicide")


def _lerp_hex(a: str, b: str, t: float) -> str:
    av = [int(a[i : i + 2], 16) for i in (1, 3, 5)]
    bv = [int(b[i : i + 2], 16) for i in (1, 3, 5)]
    return "#" + "".join(f"{round(x + (y - x) * t):02x}" for x, y in zip(av, bv))


def _point_colors(color_key: str, values: np.ndarray) -> list[str]:
    if color_key == "time":
        lo, hi = float(values.min()), float(values.max())
        span = (hi - lo) or 1.0
        return [_lerp_hex("#440154", "#fde725", (v - lo) / span) for v in values]
    if color_key == "variety":
        return [CLASS_PALETTE[int(v) % len(CLASS_PALETTE)] for v in values]
    if color_key == "fungicide":
        return ["#d62728" if v else "#1f77b4" for v in values]
    raise ConfigError(f"unknown color key {color_key!r}; choose from {COLOR_KEYS}")


def scatter_svg(
    points: np.ndarray,
    color_values: np.ndarray,
    color_key: str,
    rollouts: list[np.ndarray] | None = None,
    width: int = 640,
    height: int = 480,
    radius: float = 3.0,
) -> str:
    """SVG document with one circle per point, colored by ``color_key``
    (time gradient, per-variety palette, or fungicide two-tone), plus one
    polyline per rollout path."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    colors = _point_colors(color_key, np.asarray(color_values))
    rollouts = rollouts or []

    everything = [points] + [np.atleast_2d(r) for r in rollouts]
    allpts = np.concatenate(everything)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    margin = 20.0

    def to_px(p):
        x = margin + (p[0] - lo[0]) / span[0] * (width - 2 * margin)
        # SVG y axis points down
        y = height - margin - (p[1] - lo[1]) / span[1] * (height - 2 * margin)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for p, color in zip(points, colors):
        x, y = to_px(p)
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" '
            f'fill="{color}" fill-opacity="0.8"/>'
        )
    for path in rollouts:
        path = np.atleast_2d(path)
        coords = " ".join("{:.2f},{:.2f}".format(*to_px(p)) for p in path)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="#111111" '
            'stroke-width="1.5" marker-end="none"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
