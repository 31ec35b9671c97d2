"""Writer for the TLTF feature-set format.

Layout (little-endian): "TLTF" magic, u32 version = 1, u64 record count,
u32 feature dim, u32 metadata length, UTF-8 JSON metadata, then per
record: u32 track_id, u16 session_index, f32 time_norm, u16 variety_id,
u8 flags (bit0 fungicide, bit1 rot, bit2 rot-valid), u8 spatial tag
(0 left / 1 right / 2 none), and feature_dim little-endian f32 values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TLTF"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")
_RECORD_FIXED = struct.Struct("<IHfHBB")

FLAG_FUNGICIDE = 0x01
FLAG_ROT = 0x02
FLAG_ROT_VALID = 0x04


@dataclass
class OutRecord:
    track_id: int
    session_index: int
    time_norm: float
    variety_id: int
    fungicide: bool
    spatial_tag: int  # 0 left, 1 right, 2 none
    features: np.ndarray
    rot: bool | None = None


def dump_tltf(
    records: list[OutRecord],
    feature_dim: int,
    span_days: float,
    class_names: list[str],
    backbone: str,
    scale: str,
) -> bytes:
    meta = json.dumps(
        {
            "span_days": span_days,
            "class_names": class_names,
            "backbone": backbone,
            "scale": scale,
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(records), feature_dim, len(meta)), meta]
    for rec in records:
        feats = np.ascontiguousarray(rec.features, dtype="<f4")
        if feats.shape != (feature_dim,):
            raise ValueError(
                f"track {rec.track_id}: feature shape {feats.shape} != ({feature_dim},)"
            )
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"track {rec.track_id}: non-finite features")
        if not 0.0 <= rec.time_norm <= 1.0:
            raise ValueError(f"track {rec.track_id}: time_norm {rec.time_norm}")
        flags = 0
        if rec.fungicide:
            flags |= FLAG_FUNGICIDE
        if rec.rot is not None:
            flags |= FLAG_ROT_VALID
            if rec.rot:
                flags |= FLAG_ROT
        parts.append(
            _RECORD_FIXED.pack(
                rec.track_id,
                rec.session_index,
                rec.time_norm,
                rec.variety_id,
                flags,
                rec.spatial_tag,
            )
        )
        parts.append(feats.tobytes())
    return b"".join(parts)
