"""TLTF binary serialization for feature sets.

Layout, little-endian throughout::

    magic     4 bytes  ASCII "TLTF"
    version   u32      = 1
    n_records u64
    feature_dim u32
    meta_len  u32
    meta      UTF-8 JSON, meta_len bytes
              keys: span_days (number), class_names (string list),
              backbone (string), scale (string)
    records   n_records x record

    record:
    track_id      u32
    session_index u16
    time_norm     f32
    variety_id    u16
    flags         u8   bit0 fungicide, bit1 rot, bit2 rot-valid
    spatial_tag   u8   0=Left, 1=Right, 2=None
    features      feature_dim x f32

Writing is a pure function of the set content; a write -> read round
trip reproduces the set exactly, bit-for-bit on the feature floats.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import ParseError, ValidationError
from .features import FeatureRecord, FeatureSet, Scale, SpatialTag

MAGIC = b"TLTF"
VERSION = 1

_HEADER = struct.Struct("<4sIQII")
_RECORD_FIXED = struct.Struct("<IHfHBB")

_FLAG_FUNGICIDE = 0x01
_FLAG_ROT = 0x02
_FLAG_ROT_VALID = 0x04

_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


def record_size(feature_dim: int) -> int:
    return _RECORD_FIXED.size + 4 * feature_dim


def write_features(feature_set: FeatureSet, sink: BinaryIO) -> None:
    """Serialize ``feature_set`` to ``sink``.

    The set is validated up front; nothing is written on failure.
    """
    feature_set.validate()
    for i, rec in enumerate(feature_set.records):
        if rec.track_id > _U32_MAX:
            raise ValidationError(f"record {i}: track_id exceeds u32")
        if rec.session_index > _U16_MAX:
            raise ValidationError(f"record {i}: session_index exceeds u16")
        if rec.variety_id > _U16_MAX:
            raise ValidationError(f"record {i}: variety_id exceeds u16")

    meta = json.dumps(
        {
            "span_days": feature_set.span_days,
            "class_names": list(feature_set.class_names),
            "backbone": feature_set.backbone,
            "scale": feature_set.scale.value,
        },
        sort_keys=True,
    ).encode("utf-8")

    sink.write(
        _HEADER.pack(
            MAGIC, VERSION, len(feature_set.records), feature_set.feature_dim, len(meta)
        )
    )
    sink.write(meta)
    for rec in feature_set.records:
        flags = 0
        if rec.fungicide:
            flags |= _FLAG_FUNGICIDE
        if rec.rot is not None:
            flags |= _FLAG_ROT_VALID
            if rec.rot:
                flags |= _FLAG_ROT
        sink.write(
            _RECORD_FIXED.pack(
                rec.track_id,
                rec.session_index,
                rec.time_norm,
                rec.variety_id,
                flags,
                int(rec.spatial_tag),
            )
        )
        sink.write(rec.features.astype("<f4", copy=False).tobytes())


def read_features(source: BinaryIO) -> FeatureSet:
    """Parse a TLTF stream back into a :class:`FeatureSet`.

    Raises :class:`ParseError` with the failing byte offset on bad magic,
    unknown version, truncation, or non-finite feature values.
    """
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        buf = source.read(n)
        if len(buf) != n:
            raise ParseError(f"truncated stream while reading {what}", offset + len(buf))
        offset += n
        return buf

    magic = take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    header = take(_HEADER.size - 4, "header")
    version, n_records, feature_dim, meta_len = struct.unpack("<IQII", header)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    if feature_dim == 0:
        raise ParseError("feature_dim must be > 0", 16)

    meta_raw = take(meta_len, "metadata")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid metadata: {exc}", _HEADER.size) from exc

    try:
        scale = Scale(meta["scale"])
        feature_set = FeatureSet(
            feature_dim=feature_dim,
            span_days=float(meta["span_days"]),
            class_names=[str(c) for c in meta["class_names"]],
            backbone=str(meta["backbone"]),
            scale=scale,
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"invalid metadata: {exc}", _HEADER.size) from exc

    feat_bytes = 4 * feature_dim
    for i in range(n_records):
        fixed = take(_RECORD_FIXED.size, f"record {i}")
        track_id, session_index, time_norm, variety_id, flags, tag = (
            _RECORD_FIXED.unpack(fixed)
        )
        feat_offset = offset
        feats = np.frombuffer(take(feat_bytes, f"record {i} features"), dtype="<f4")
        if not np.all(np.isfinite(feats)):
            bad = int(np.flatnonzero(~np.isfinite(feats))[0])
            raise ParseError(
                f"non-finite feature value in record {i}", feat_offset + 4 * bad
            )
        if not np.isfinite(time_norm) or not 0.0 <= time_norm <= 1.0:
            raise ParseError(
                f"time_norm {time_norm} outside [0, 1] in record {i}",
                feat_offset - _RECORD_FIXED.size + 6,
            )
        if tag not in (0, 1, 2):
            raise ParseError(
                f"unknown spatial tag {tag} in record {i}",
                feat_offset - 1,
            )
        rot = bool(flags & _FLAG_ROT) if flags & _FLAG_ROT_VALID else None
        try:
            record = FeatureRecord(
                track_id=track_id,
                session_index=session_index,
                time_norm=time_norm,
                variety_id=variety_id,
                fungicide=bool(flags & _FLAG_FUNGICIDE),
                features=feats,
                rot=rot,
                spatial_tag=SpatialTag(tag),
                scale=scale,
            )
        except ValidationError as exc:
            raise ParseError(
                f"invalid record {i}: {exc}", feat_offset - _RECORD_FIXED.size
            ) from exc
        feature_set.records.append(record)

    try:
        feature_set.validate()
    except ValidationError as exc:
        raise ParseError(str(exc), _HEADER.size) from exc
    return feature_set


def write_features_file(feature_set: FeatureSet, path) -> None:
    import io

    buf = io.BytesIO()
    write_features(feature_set, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_features_file(path) -> FeatureSet:
    with open(path, "rb") as fh:
        return read_features(fh)
