import numpy as np
import pytest

from croptraj.errors import ConfigError, NumericError
from croptraj.features import FeatureRecord, FeatureSet, Scale
from croptraj.nn import bce_loss, mse_loss
from croptraj.pretext import (
    BatchLabels,
    HeadConfig,
    PretextModel,
    TrainConfig,
    build_model,
    encode,
    forward,
    loss_and_grads,
    model_from_json,
    model_to_json,
    predict,
    total_loss,
    train,
)

ALL_HEADS = HeadConfig(time=True, variety=True, fungicide=True, rot=True, n_classes=3)


def labeled_set(n=24, dim=8, n_classes=3, seed=0, scale=Scale.BERRY):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        records.append(
            FeatureRecord(
                track_id=i,
                session_index=0,
                time_norm=float(rng.uniform()),
                variety_id=int(rng.integers(0, n_classes)),
                fungicide=bool(rng.integers(0, 2)),
                features=rng.normal(size=dim).astype(np.float32),
                rot=(bool(rng.integers(0, 2)) if (scale is Scale.BERRY and i % 3) else None),
                scale=scale,
            )
        )
    return FeatureSet(
        feature_dim=dim,
        span_days=108.0,
        class_names=[chr(ord("A") + c) for c in range(n_classes)],
        records=records,
        scale=scale,
    )


@pytest.mark.parametrize(
    "n,dims", [(64, (32, 16)), (768, (384, 192)), (7, (3, 1))]
)
def test_build_model_dimension_rule(n, dims):
    model = build_model(n, HeadConfig(time=True), seed=0)
    assert model.encoder[0].weights.shape == (dims[0], n)
    assert model.encoder[1].weights.shape == (dims[1], dims[0])
    assert model.latent_dim == dims[1]


def test_build_model_head_shapes_and_errors():
    model = build_model(64, ALL_HEADS, seed=1)
    assert model.heads["variety"].weights.shape == (3, 16)
    for name in ("time", "fungicide", "rot"):
        assert model.heads[name].weights.shape == (1, 16)
    with pytest.raises(ConfigError):
        HeadConfig(time=False)
    with pytest.raises(ConfigError):
        build_model(3, HeadConfig(time=True), seed=0)


def test_forward_zero_network_outputs():
    model = build_model(8, ALL_HEADS, seed=0)
    for layer in model.encoder:
        layer.weights[:] = 0
    for layer in model.heads.values():
        layer.weights[:] = 0
    model.heads["time"].bias[:] = 0.37
    z, out = forward(model, np.ones(8))
    assert np.array_equal(z, np.zeros(2))
    assert out["time"] == pytest.approx(0.37)
    assert out["variety"] == pytest.approx([0.5, 0.5, 0.5])
    assert out["fungicide"] == pytest.approx(0.5)


def test_forward_latent_shape_and_encode_consistency():
    model = build_model(16, ALL_HEADS, seed=2)
    rng = np.random.default_rng(0)
    f = rng.normal(size=16)
    z, _ = forward(model, f)
    assert z.shape == (4,)
    assert np.array_equal(encode(model, f), z)
    batch = rng.normal(size=(5, 16))
    zb = encode(model, batch)
    assert zb.shape == (5, 4)
    for i in range(5):
        assert np.allclose(zb[i], encode(model, batch[i]), rtol=1e-12, atol=1e-12)
    # order preservation: permuting inputs permutes outputs identically
    perm = rng.permutation(5)
    assert np.array_equal(encode(model, batch[perm]), zb[perm])


def test_total_loss_is_sum_of_head_losses():
    rng = np.random.default_rng(3)
    for _ in range(50):
        outputs = {
            "time": float(rng.normal()),
            "variety": rng.uniform(0.01, 0.99, size=3),
            "fungicide": float(rng.uniform(0.01, 0.99)),
            "rot": float(rng.uniform(0.01, 0.99)),
        }
        onehot = np.zeros(3)
        onehot[int(rng.integers(0, 3))] = 1.0
        labels = {
            "time": float(rng.uniform()),
            "variety": onehot,
            "fungicide": float(rng.integers(0, 2)),
            "rot": float(rng.integers(0, 2)),
        }
        expected = (
            mse_loss(np.array([outputs["time"]]), np.array([labels["time"]]))[0]
            + bce_loss(outputs["variety"], labels["variety"])[0]
            + bce_loss(np.array([outputs["fungicide"]]), np.array([labels["fungicide"]]))[0]
            + bce_loss(np.array([outputs["rot"]]), np.array([labels["rot"]]))[0]
        )
        assert total_loss(outputs, labels, ALL_HEADS) == pytest.approx(
            expected, abs=1e-12
        )


def test_total_loss_single_head_and_missing_rot():
    cfg = HeadConfig(time=True)
    outputs = {"time": 0.6}
    labels = {"time": 0.1}
    assert total_loss(outputs, labels, cfg) == pytest.approx(0.25)
    labels = {"time": 0.1, "variety": np.array([1.0, 0, 0]), "fungicide": 1.0, "rot": None}
    outputs = {"time": 0.1, "variety": np.array([1.0, 0, 0]), "fungicide": 1.0, "rot": 0.9}
    val = total_loss(outputs, labels, ALL_HEADS)
    # rot label missing -> only the clamp floor from perfect BCE terms remains
    assert val < 1e-5


def jitter_biases(model, seed):
    # zero He-init biases put dead ReLU rows exactly on the kink, where
    # finite differences are meaningless; jitter moves them off it
    rng = np.random.default_rng(seed)
    for layer in model.encoder:
        layer.bias += rng.normal(0, 0.05, size=layer.bias.shape)
    for layer in model.heads.values():
        layer.bias += rng.normal(0, 0.05, size=layer.bias.shape)


def assert_off_kink(model, features, margin=1e-5):
    from croptraj.pretext import _forward_cached

    a1, _, a2, _, _, _ = _forward_cached(model, features)
    assert min(np.abs(a1).min(), np.abs(a2).min()) > margin


def grad_check(model, features, labels, rtol=1e-4):
    from croptraj.pretext import _apply_params, _params_dict

    assert_off_kink(model, features)
    loss, grads = loss_and_grads(model, features, labels)
    params = _params_dict(model)
    h = 1e-6
    worst = 0.0
    for name, theta in params.items():
        flat = theta.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            _apply_params(model, params)
            up = loss_and_grads(model, features, labels)[0]
            flat[i] = orig - h
            _apply_params(model, params)
            down = loss_and_grads(model, features, labels)[0]
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grads[name].ravel()[i]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, err)
    _apply_params(model, params)
    assert worst < rtol, f"worst relative gradient error {worst}"


def test_gradients_match_finite_differences_all_heads():
    fs = labeled_set(n=6, dim=8)
    model = build_model(8, ALL_HEADS, seed=5)
    jitter_biases(model, seed=50)
    labels = BatchLabels.from_set(fs, ALL_HEADS)
    grad_check(model, fs.feature_matrix(), labels)


def test_gradients_match_finite_differences_single_head():
    fs = labeled_set(n=5, dim=8)
    cfg = HeadConfig(time=True)
    model = build_model(8, cfg, seed=6)
    jitter_biases(model, seed=60)
    labels = BatchLabels.from_set(fs, cfg)
    grad_check(model, fs.feature_matrix(), labels)


def test_rot_invalid_records_do_not_touch_rot_gradients():
    fs = labeled_set(n=8, dim=8, scale=Scale.BERRY, seed=9)
    cfg = ALL_HEADS
    model = build_model(8, cfg, seed=7)
    labels = BatchLabels.from_set(fs, cfg)
    feats = fs.feature_matrix()
    _, grads = loss_and_grads(model, feats, labels)

    # flipping the rot label of an invalid record must change nothing
    flipped = BatchLabels.from_set(fs, cfg)
    invalid = np.flatnonzero(~flipped.rot_valid)
    assert invalid.size > 0
    flipped.rot[invalid] = 1.0 - flipped.rot[invalid]
    loss2, grads2 = loss_and_grads(model, feats, flipped)
    for name in grads:
        assert np.array_equal(grads[name], grads2[name])


def test_argmax_variety_invariant_under_monotone_transform():
    model = build_model(16, HeadConfig(time=False, variety=True, n_classes=4), seed=8)
    rng = np.random.default_rng(1)
    f = rng.normal(size=16)
    _, out = forward(model, f)
    base = int(np.argmax(out["variety"]))
    # scaling all pre-activations by a positive constant preserves order
    model.heads["variety"].weights[:] *= 3.0
    model.heads["variety"].bias[:] *= 3.0
    _, out2 = forward(model, f)
    assert int(np.argmax(out2["variety"])) == base


def test_train_is_deterministic_and_loss_decreases():
    fs = labeled_set(n=120, dim=8, seed=10)
    cfg = HeadConfig(time=True, variety=True, fungicide=True, n_classes=3)
    model = build_model(8, cfg, seed=11)
    tc = TrainConfig(learning_rate=0.005, epochs=4, batch_size=16, seed=12)
    m1, hist1 = train(model, fs, tc)
    m2, hist2 = train(model, fs, tc)
    assert hist1 == hist2
    for a, b in zip(m1.encoder, m2.encoder):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)
    assert hist1[-1] < hist1[0]


def test_train_rejects_bad_configs():
    fs = labeled_set(n=10, dim=8)
    model = build_model(8, HeadConfig(time=True), seed=0)
    with pytest.raises(ConfigError):
        train(model, fs, TrainConfig(epochs=0))
    patch_set = labeled_set(n=10, dim=8, scale=Scale.PATCH)
    rot_model = build_model(8, ALL_HEADS, seed=0)
    with pytest.raises(ConfigError):
        train(rot_model, patch_set, TrainConfig())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_non_finite_loss():
    fs = labeled_set(n=10, dim=8)
    model = build_model(8, HeadConfig(time=True), seed=0)
    model.encoder[0].weights[:] = 1e200
    model.encoder[1].weights[:] = 1e200
    with pytest.raises(NumericError) as exc:
        train(model, fs, TrainConfig(epochs=1))
    assert "epoch" in str(exc.value)


def test_predict_decoding_rules():
    model = build_model(8, ALL_HEADS, seed=3)
    for layer in model.encoder:
        layer.weights[:] = 0
    for layer in model.heads.values():
        layer.weights[:] = 0
        layer.bias[:] = 0
    model.heads["time"].bias[:] = 0.5
    model.heads["variety"].bias[:] = np.array([-2.0, 2.0, -1.0])
    p = predict(model, np.zeros(8), span_days=108.0)
    assert p.time_days == pytest.approx(54.0)
    assert p.variety_id == 1
    # sigmoid(0) = 0.5 exactly -> ties predict positive
    assert p.fungicide is True and p.rot is True
    model.heads["time"].bias[:] = 1.7
    assert predict(model, np.zeros(8), 108.0).time_days == pytest.approx(108.0)


def test_model_json_round_trip_and_validation():
    model = build_model(16, ALL_HEADS, seed=4)
    text = model_to_json(model)
    back = model_from_json(text)
    assert back.input_dim == model.input_dim
    for a, b in zip(model.encoder, back.encoder):
        assert np.array_equal(a.weights, b.weights)
    for name in model.heads:
        assert np.array_equal(model.heads[name].weights, back.heads[name].weights)

    import json

    doc = json.loads(text)
    doc["encoder"][0]["weights"] = doc["encoder"][0]["weights"][:-1]
    with pytest.raises((ConfigError, ValueError)):
        model_from_json(json.dumps(doc))
