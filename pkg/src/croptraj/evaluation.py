"""Per-head metrics and the unseen-variety generalization score.

Time prediction is scored as mean absolute error in days (the signed
form would cancel to near zero); the classification heads are scored as
percent agreement. Withheld varieties, which no head was trained on, are
scored by clustering their embedded points with a Gaussian mixture and
majority-labeling each component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureSet
from .pretext import PretextModel, predict_batch
from .trajectory import fit_bgmm, responsibilities


def mae_days(pred_norm, label_norm, span_days: float) -> tuple[float, float]:
    """Mean and population std of |pred - label| rescaled to days."""
    pred = np.asarray(pred_norm, dtype=np.float64)
    label = np.asarray(label_norm, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {label.shape}")
    if pred.size == 0:
        raise DataError("mae_days needs at least one prediction")
    err = np.abs(pred - label) * span_days
    return float(err.mean()), float(err.std())


def percent_agreement(pred_labels, true_labels) -> float:
    """100 * fraction of exact matches."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise DataError("percent_agreement needs at least one prediction")
    return float(100.0 * np.mean(pred == true))


@dataclass
class EvalReport:
    n_records: int
    time_mae_days: float | None = None
    time_mae_std: float | None = None
    variety_pa: float | None = None
    fungicide_pa: float | None = None
    rot_pa: float | None = None
    n_rot_valid: int = 0
    unseen_pa: float | None = None
    label: str = ""


def eval_heads(model: PretextModel, test_set: FeatureSet) -> EvalReport:
    """Evaluate every enabled head on a labeled set.

    Rot is scored over rot-valid records only; everything else over all
    records.
    """
    if len(test_set) == 0:
        raise DataError("evaluation set is empty")
    cfg = model.head_config
    if cfg.variety and cfg.n_classes != len(test_set.class_names):
        raise ConfigError(
            f"model has {cfg.n_classes} variety classes, set defines "
            f"{len(test_set.class_names)}"
        )
    preds = predict_batch(model, test_set.feature_matrix(), test_set.span_days)
    report = EvalReport(n_records=len(test_set), label=test_set.backbone)
    if cfg.time:
        truth = np.array([r.time_norm for r in test_set.records])
        report.time_mae_days, report.time_mae_std = mae_days(
            preds["time_norm"], truth, test_set.span_days
        )
    if cfg.variety:
        truth = np.array([r.variety_id for r in test_set.records])
        report.variety_pa = percent_agreement(preds["variety_id"], truth)
    if cfg.fungicide:
        truth = np.array([r.fungicide for r in test_set.records])
        report.fungicide_pa = percent_agreement(preds["fungicide"], truth)
    if cfg.rot:
        valid = np.array([r.rot is not None for r in test_set.records])
        report.n_rot_valid = int(valid.sum())
        if report.n_rot_valid == 0:
            raise ConfigError("rot head enabled but no test record has a rot label")
        truth = np.array([bool(r.rot) for r in test_set.records if r.rot is not None])
        report.rot_pa = percent_agreement(preds["rot"][valid], truth)
    return report


def eval_unseen_classes(
    points: np.ndarray, true_varieties: np.ndarray, n_withheld: int, seed: int = 0
) -> float:
    """Percent agreement for varieties the model never trained on.

    Fits an ``n_withheld``-component mixture to the embedded test points,
    assigns each point to its max-responsibility component, labels each
    component with the majority variety among its points (ties to the
    lower id), and scores the per-point component labels.
    """
    points = np.asarray(points, dtype=np.float64)
    true_varieties = np.asarray(true_varieties)
    if points.ndim != 2 or points.shape[0] != true_varieties.shape[0]:
        raise ConfigError("points and labels must align")
    distinct = np.unique(true_varieties)
    if distinct.size != n_withheld:
        raise ConfigError(
            f"expected exactly {n_withheld} withheld varieties, found {distinct.size}"
        )
    if n_withheld > points.shape[0]:
        raise DataError("more components than points")

    gmm = fit_bgmm(points, n_withheld, seed=seed)
    assign = np.argmax(responsibilities(gmm, points), axis=1)
    component_label = {}
    for comp in range(gmm.n_components):
        members = true_varieties[assign == comp]
        if members.size == 0:
            component_label[comp] = int(distinct.min())
            continue
        ids, counts = np.unique(members, return_counts=True)
        component_label[comp] = int(ids[np.argmax(counts)])  # ties -> lower id
    pred = np.array([component_label[c] for c in assign])
    return percent_agreement(pred, true_varieties)


_COLUMNS = ("Time MAE(d)", "Class PA", "Fungicide PA", "Rot PA")


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text table, one row per report."""

    def cells(report: EvalReport):
        time = (
            f"{report.time_mae_days:.2f} ± {report.time_mae_std:.2f}"
            if report.time_mae_days is not None
            else "-"
        )
        fmt = lambda v: f"{v:.1f}%" if v is not None else "-"
        return (
            time,
            fmt(report.variety_pa),
            fmt(report.fungicide_pa),
            fmt(report.rot_pa),
        )

    rows = [(r.label or "model",) + cells(r) for r in reports]
    header = ("",) + _COLUMNS
    widths = [
        max(len(str(row[i])) for row in rows + [header]) for i in range(len(header))
    ]
    lines = []
    for row in [header] + rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(
        {
            "label": report.label,
            "n_records": report.n_records,
            "time_mae_days": report.time_mae_days,
            "time_mae_std": report.time_mae_std,
            "variety_pa": report.variety_pa,
            "fungicide_pa": report.fungicide_pa,
            "rot_pa": report.rot_pa,
            "n_rot_valid": report.n_rot_valid,
            "unseen_pa": report.unseen_pa,
        }
    )
