"""Feature records, season-time normalization, and the train/test split.

A :class:`FeatureRecord` is one backbone feature vector for a tracked patch
grid cell or berry at one imaging session, together with its metadata
labels. Records are immutable; every operation here is a pure function.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ValidationError


class SpatialTag(enum.IntEnum):
    """Which side of the source image a patch came from (None = no side)."""

    LEFT = 0
    RIGHT = 1
    NONE = 2


class Scale(str, enum.Enum):
    PATCH = "patch"
    BERRY = "berry"


def normalize_time(day_index: float, span_days: float) -> float:
    """Map a day offset into season-relative time in [0, 1].

    Raises ValueError if ``day_index`` falls outside ``[0, span_days]``.
    """
    if span_days <= 0:
        raise ValueError(f"span_days must be positive, got {span_days}")
    if not 0 <= day_index <= span_days:
        raise ValueError(
            f"day_index {day_index} outside [0, {span_days}]"
        )
    return day_index / span_days


def _quantize_f32(x: float) -> float:
    # time_norm is stored at 32-bit precision on disk; quantizing at
    # construction keeps write -> read an exact identity.
    return float(np.float32(x))


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One feature vector with its session, identity, and label metadata.

    ``features`` is kept as float32 (the storage precision); downstream
    numerics upcast to float64. ``rot`` carries a label only for
    berry-scale records; it is None elsewhere.
    """

    track_id: int
    session_index: int
    time_norm: float
    variety_id: int
    fungicide: bool
    features: np.ndarray
    rot: bool | None = None
    spatial_tag: SpatialTag = SpatialTag.NONE
    scale: Scale = Scale.PATCH

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 1:
            raise ValidationError("features must be a 1-D vector")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "time_norm", _quantize_f32(self.time_norm))
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.time_norm <= 1.0:
            raise ValidationError(f"time_norm {self.time_norm} outside [0, 1]")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(
                f"non-finite feature entries in track {self.track_id}"
            )
        if self.track_id < 0 or self.session_index < 0:
            raise ValidationError("track_id and session_index must be >= 0")
        if self.variety_id < 0:
            raise ValidationError("variety_id must be >= 0")
        if self.rot is not None and self.scale is not Scale.BERRY:
            raise ValidationError("rot labels are only valid for berry-scale records")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and self.session_index == other.session_index
            and self.time_norm == other.time_norm
            and self.variety_id == other.variety_id
            and self.fungicide == other.fungicide
            and self.rot == other.rot
            and self.spatial_tag == other.spatial_tag
            and self.scale == other.scale
            and np.array_equal(self.features, other.features)
        )


@dataclass
class FeatureSet:
    """An ordered collection of records with shared dataset metadata."""

    feature_dim: int
    span_days: float
    class_names: list[str]
    records: list[FeatureRecord] = field(default_factory=list)
    backbone: str = "unknown"
    scale: Scale = Scale.PATCH

    def validate(self) -> None:
        if self.feature_dim <= 0:
            raise ValidationError(f"feature_dim must be > 0, got {self.feature_dim}")
        if self.span_days <= 0:
            raise ValidationError(f"span_days must be > 0, got {self.span_days}")
        n_classes = len(self.class_names)
        for i, rec in enumerate(self.records):
            rec.validate()
            if rec.features.shape[0] != self.feature_dim:
                raise ValidationError(
                    f"record {i}: feature length {rec.features.shape[0]} "
                    f"!= feature_dim {self.feature_dim}"
                )
            if rec.variety_id >= n_classes:
                raise ValidationError(
                    f"record {i}: variety_id {rec.variety_id} >= "
                    f"class count {n_classes}"
                )
            if rec.scale is not self.scale:
                raise ValidationError(
                    f"record {i}: scale {rec.scale} != set scale {self.scale}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def feature_matrix(self) -> np.ndarray:
        """All feature vectors stacked as float64, one row per record."""
        if not self.records:
            return np.zeros((0, self.feature_dim))
        return np.stack([r.features for r in self.records]).astype(np.float64)

    def subset(self, indices) -> "FeatureSet":
        return replace(self, records=[self.records[i] for i in indices])


def split_train_test(
    feature_set: FeatureSet, train_fraction: float, seed: int
) -> tuple[FeatureSet, FeatureSet]:
    """Partition records into train and test sets.

    Left-tagged records always go to train and right-tagged records to
    test. Untagged records are assigned at whole-track granularity by a
    seed-deterministic shuffle, with ceil(fraction * n_tracks) tracks
    going to train. Record order within each side follows the input set.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(feature_set) == 0:
        raise DataError("cannot split an empty feature set")

    train_idx: list[int] = []
    test_idx: list[int] = []
    untagged_tracks: dict[int, list[int]] = {}
    for i, rec in enumerate(feature_set.records):
        if rec.spatial_tag is SpatialTag.LEFT:
            train_idx.append(i)
        elif rec.spatial_tag is SpatialTag.RIGHT:
            test_idx.append(i)
        else:
            untagged_tracks.setdefault(rec.track_id, []).append(i)

    if untagged_tracks:
        track_ids = sorted(untagged_tracks)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(track_ids))
        n_train = math.ceil(train_fraction * len(track_ids))
        train_tracks = {track_ids[j] for j in order[:n_train]}
        for tid in track_ids:
            target = train_idx if tid in train_tracks else test_idx
            target.extend(untagged_tracks[tid])

    return (
        feature_set.subset(sorted(train_idx)),
        feature_set.subset(sorted(test_idx)),
    )
