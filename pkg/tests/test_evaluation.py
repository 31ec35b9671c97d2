import numpy as np
import pytest

from croptraj.errors import ConfigError, DataError
from croptraj.evaluation import (
    EvalReport,
    eval_heads,
    eval_unseen_classes,
    format_report_table,
    mae_days,
    percent_agreement,
    report_to_json,
)
from croptraj.features import FeatureRecord, FeatureSet
from croptraj.nn import DenseLayer
from croptraj.pretext import HeadConfig, PretextModel


def test_mae_days_basics():
    assert mae_days([0.5, 0.2], [0.5, 0.2], 108.0) == (0.0, 0.0)
    mean, std = mae_days([0.25, 0.75], [0.5, 0.5], 108.0)
    assert mean == pytest.approx(27.0)
    assert std == pytest.approx(0.0)
    with pytest.raises(DataError):
        mae_days([], [], 108.0)


def test_mae_days_matches_elementwise_recomputation():
    rng = np.random.default_rng(0)
    pred = rng.uniform(size=50)
    label = rng.uniform(size=50)
    span = 108.0
    mean, std = mae_days(pred, label, span)
    errs = [abs(p - l) * span for p, l in zip(pred, label)]
    assert mean == pytest.approx(sum(errs) / len(errs))
    assert std == pytest.approx(
        np.sqrt(sum((e - mean) ** 2 for e in errs) / len(errs))
    )


def test_mae_days_scales_linearly_with_span():
    rng = np.random.default_rng(1)
    pred, label = rng.uniform(size=20), rng.uniform(size=20)
    m1, s1 = mae_days(pred, label, 50.0)
    m2, s2 = mae_days(pred, label, 100.0)
    assert m2 == pytest.approx(2 * m1)
    assert s2 == pytest.approx(2 * s1)


def test_percent_agreement_values():
    assert percent_agreement([1, 2, 3], [1, 2, 3]) == 100.0
    assert percent_agreement([1, 2, 3, 4], [1, 2, 3, 0]) == 75.0
    assert percent_agreement([1, 1], [2, 2]) == 0.0
    with pytest.raises(DataError):
        percent_agreement([], [])


def test_percent_agreement_permutation_equivariant():
    rng = np.random.default_rng(2)
    pred = rng.integers(0, 4, size=40)
    true = rng.integers(0, 4, size=40)
    base = percent_agreement(pred, true)
    perm = rng.permutation(40)
    assert percent_agreement(pred[perm], true[perm]) == base


def oracle_set_and_model(n_classes=2, n=40, seed=3):
    """A feature layout the handcrafted model can read labels from:
    f = [time, onehot(variety), fungicide, padding]."""
    rng = np.random.default_rng(seed)
    dim = 16
    records = []
    for i in range(n):
        t = float(np.float32(rng.uniform()))
        variety = int(rng.integers(0, n_classes))
        fung = bool(rng.integers(0, 2))
        f = np.zeros(dim, dtype=np.float32)
        f[0] = t
        f[1 + variety] = 1.0
        f[1 + n_classes] = float(fung)
        records.append(
            FeatureRecord(
                track_id=i, session_index=0, time_norm=t, variety_id=variety,
                fungicide=fung, features=f,
            )
        )
    fs = FeatureSet(
        feature_dim=dim, span_days=108.0,
        class_names=[chr(65 + c) for c in range(n_classes)], records=records,
    )

    # encoder passes the first dim//4 coordinates through untouched
    h1, h2 = dim // 2, dim // 4
    e1 = DenseLayer(np.eye(h1, dim), np.zeros(h1))
    e2 = DenseLayer(np.eye(h2, h1), np.zeros(h2))
    heads = {
        "time": DenseLayer(np.array([[1.0, 0, 0, 0]]), np.zeros(1)),
        "variety": DenseLayer(
            np.array([[0, 100.0, 0, 0], [0, 0, 100.0, 0]]), np.full(2, -50.0)
        ),
        "fungicide": DenseLayer(np.array([[0, 0, 0, 100.0]]), np.array([-50.0])),
    }
    cfg = HeadConfig(time=True, variety=True, fungicide=True, n_classes=n_classes)
    return fs, PretextModel(dim, [e1, e2], heads, cfg)


def test_eval_heads_oracle_model_is_perfect():
    fs, model = oracle_set_and_model()
    report = eval_heads(model, fs)
    assert report.time_mae_days == 0.0
    assert report.variety_pa == 100.0
    assert report.fungicide_pa == 100.0
    assert report.n_records == len(fs)


def test_eval_heads_constant_class_model_hits_chance():
    fs, model = oracle_set_and_model(n_classes=2, n=64, seed=4)
    # rebalance: force exactly half the records into each class
    for i, rec in enumerate(fs.records):
        f = rec.features.copy()
        f[1:3] = 0.0
        variety = i % 2
        f[1 + variety] = 1.0
        fs.records[i] = FeatureRecord(
            track_id=rec.track_id, session_index=0, time_norm=rec.time_norm,
            variety_id=variety, fungicide=rec.fungicide, features=f,
        )
    model.heads["variety"] = DenseLayer(np.zeros((2, 4)), np.array([5.0, -5.0]))
    report = eval_heads(model, fs)
    assert report.variety_pa == pytest.approx(50.0)


def test_eval_heads_empty_set_rejected():
    fs, model = oracle_set_and_model()
    fs.records = []
    with pytest.raises(DataError):
        eval_heads(model, fs)


def test_unseen_classes_separable_clusters():
    rng = np.random.default_rng(5)
    pts = np.concatenate(
        [rng.normal((0, 0), 0.2, (40, 2)), rng.normal((8, 8), 0.2, (40, 2))]
    )
    labels = np.repeat([3, 6], 40)
    assert eval_unseen_classes(pts, labels, 2, seed=0) == 100.0


def test_unseen_classes_single_degenerate_cluster():
    pts = np.zeros((10, 2))
    labels = np.full(10, 4)
    assert eval_unseen_classes(pts, labels, 1, seed=0) == 100.0


def test_unseen_classes_interleaved_matches_majority_share():
    rng = np.random.default_rng(6)
    pts = rng.normal(0, 1.0, (300, 2))
    labels = np.array([0] * 180 + [1] * 120)  # 60% majority share
    pa = eval_unseen_classes(pts, labels, 2, seed=1)
    assert abs(pa - 60.0) <= 10.0


def test_unseen_classes_invariant_to_relabeling():
    rng = np.random.default_rng(7)
    pts = np.concatenate(
        [rng.normal((0, 0), 0.3, (30, 2)), rng.normal((5, 0), 0.3, (30, 2))]
    )
    labels = np.repeat([0, 1], 30)
    base = eval_unseen_classes(pts, labels, 2, seed=2)
    swapped = eval_unseen_classes(pts, 7 - labels * 3, 2, seed=2)  # {7, 4}
    assert base == swapped


def test_unseen_classes_validates_distinct_count():
    pts = np.zeros((10, 2))
    labels = np.repeat([0, 1], 5)
    with pytest.raises(ConfigError):
        eval_unseen_classes(pts, labels, 3, seed=0)


def test_report_table_layout_and_json():
    report = EvalReport(
        n_records=360, time_mae_days=3.39, time_mae_std=3.55,
        variety_pa=79.4, fungicide_pa=84.6, label="synthetic",
    )
    table = format_report_table([report])
    header, row = table.splitlines()
    assert list_cols(header) == ["Time MAE(d)", "Class PA", "Fungicide PA", "Rot PA"]
    assert "3.39 ± 3.55" in row
    assert "79.4%" in row and "84.6%" in row
    assert row.rstrip().endswith("-")  # no rot head

    import json

    doc = json.loads(report_to_json(report))
    assert doc["time_mae_days"] == 3.39
    assert doc["rot_pa"] is None


def list_cols(header_line):
    return [c.strip() for c in header_line.split("  ") if c.strip()]
