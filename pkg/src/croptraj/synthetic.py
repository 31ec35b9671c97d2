"""Synthetic time-lapse feature sets with known 2D ground truth.

Each class follows a parametric planar curve (line, arc, or S-curve);
tracks sample the class curve with small offsets, and the 2D points are
lifted into feature space through a seeded random linear map with
orthonormalized columns, so pairwise distances survive the lift exactly
(up to added noise). Every downstream stage can therefore be verified
against the constructed ground truth at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import FeatureRecord, FeatureSet, Scale

CURVE_FAMILIES = ("line", "arc", "s_curve")

# Fungicide and rot shift a curve by fixed class-independent offsets.
# Every curve family is a graph over x, so purely vertical shifts can
# never make flag variants cross; the four variants sit at distinct
# y-offsets {-0.45, 0, 0.45, 0.9} and stay decodable under the noise.
FUNGICIDE_OFFSET = np.array([0.0, 0.9])
ROT_OFFSET = np.array([0.0, -0.45])


@dataclass
class SynthConfig:
    n_classes: int = 4
    tracks_per_class: int = 8
    n_sessions: int = 40
    feature_dim: int = 64
    noise_std: float = 0.05
    span_days: float = 108.0
    fungicide_fraction: float = 0.5
    rot_fraction: float = 0.0
    scale: Scale = Scale.PATCH
    lift_seed: int = 1234
    track_offset_std: float = 0.08

    def validate(self) -> None:
        if not 1 <= self.n_classes <= 26:
            raise ConfigError("n_classes must be in [1, 26]")
        if self.n_sessions < 3:
            raise ConfigError("n_sessions must be >= 3")
        if self.feature_dim < 8:
            raise ConfigError("feature_dim must be >= 8")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not 0 <= self.fungicide_fraction <= 1:
            raise ConfigError("fungicide_fraction must be in [0, 1]")
        if self.rot_fraction and self.scale is not Scale.BERRY:
            raise ConfigError("rot labels require berry scale")


def _class_curve(class_id: int, s: np.ndarray) -> np.ndarray:
    """Planar curve for one class: family cycles line / arc / s-curve on a
    centered two-column grid of base offsets that keeps classes disjoint.

    All families advance in +x over the season, mirroring latent spaces
    where the season is the dominant drift direction; opposed time
    directions across classes would make the shared encoder fight itself.
    """
    family = CURVE_FAMILIES[class_id % len(CURVE_FAMILIES)]
    base = np.array([4.0 * (class_id % 2) - 2.0, 4.0 * (class_id // 2) - 2.0])
    if family == "line":
        pts = np.stack([3.0 * s - 1.5, 1.5 * s - 0.75], axis=1)
    elif family == "arc":
        theta = np.pi * (s - 0.5) * 5.0 / 6.0
        pts = np.stack([1.6 * np.sin(theta), 1.2 * (1.0 - np.cos(theta))], axis=1)
    else:
        pts = np.stack([3.0 * s - 1.5, 0.8 * np.sin(2.0 * np.pi * s)], axis=1)
    return pts + base


def orthonormal_lift(feature_dim: int, lift_seed: int) -> np.ndarray:
    """(feature_dim, 2) matrix with orthonormal columns; distances in the
    plane are preserved exactly under x -> lift @ x."""
    rng = np.random.default_rng(lift_seed)
    raw = rng.normal(size=(feature_dim, 2))
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def gen_synthetic(cfg: SynthConfig, seed: int = 0):
    """Feature set plus per-track true planar curves.

    Returns (FeatureSet, ground_truth) where ground_truth maps track_id
    to its noiseless (n_sessions, 2) curve. Deterministic per seed.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    lift = orthonormal_lift(cfg.feature_dim, cfg.lift_seed)
    s = np.arange(cfg.n_sessions) / (cfg.n_sessions - 1)

    records: list[FeatureRecord] = []
    ground_truth: dict[int, np.ndarray] = {}
    track_id = 0
    for class_id in range(cfg.n_classes):
        n_fung = round(cfg.fungicide_fraction * cfg.tracks_per_class)
        fung_tracks = set(rng.permutation(cfg.tracks_per_class)[:n_fung])
        n_rot = round(cfg.rot_fraction * cfg.tracks_per_class)
        rot_tracks = set(rng.permutation(cfg.tracks_per_class)[:n_rot])
        base_curve = _class_curve(class_id, s)
        for t in range(cfg.tracks_per_class):
            fungicide = t in fung_tracks
            rotten = t in rot_tracks
            curve = base_curve + rng.normal(0, cfg.track_offset_std, size=2)
            if fungicide:
                curve = curve + FUNGICIDE_OFFSET
            if rotten:
                curve = curve + ROT_OFFSET
            features = curve @ lift.T
            if cfg.noise_std > 0:
                features = features + rng.normal(
                    0, cfg.noise_std, size=features.shape
                )
            ground_truth[track_id] = curve
            for session in range(cfg.n_sessions):
                records.append(
                    FeatureRecord(
                        track_id=track_id,
                        session_index=session,
                        time_norm=float(s[session]),
                        variety_id=class_id,
                        fungicide=fungicide,
                        features=features[session].astype(np.float32),
                        rot=(rotten if cfg.scale is Scale.BERRY else None),
                        scale=cfg.scale,
                    )
                )
            track_id += 1

    feature_set = FeatureSet(
        feature_dim=cfg.feature_dim,
        span_days=cfg.span_days,
        class_names=[chr(ord("A") + c) for c in range(cfg.n_classes)],
        records=records,
        backbone="synthetic",
        scale=cfg.scale,
    )
    return feature_set, ground_truth
