"""Encoder with per-task prediction heads, joint loss, and training loop.

The encoder halves the feature dimension twice (n -> n//2 -> n//4, ReLU
after each layer); its output is the latent code every later stage works
in. Each enabled task gets a single dense head on top of the latent:
a linear scalar for time, sigmoid units for variety / fungicide / rot.
The training objective is the plain sum of the per-head losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .features import FeatureSet, Scale
from .nn import (
    BCE_CLAMP,
    AdamState,
    DenseLayer,
    adam_step,
    bce_loss,
    dense_forward,
    he_init,
    mse_loss,
    relu,
    sigmoid,
)

CLASSIFICATION_HEADS = ("variety", "fungicide", "rot")


@dataclass(frozen=True)
class HeadConfig:
    """Which pretext heads are enabled; variety needs the class count."""

    time: bool = True
    variety: bool = False
    fungicide: bool = False
    rot: bool = False
    n_classes: int = 0

    def __post_init__(self):
        if not (self.time or self.variety or self.fungicide or self.rot):
            raise ConfigError("at least one prediction head must be enabled")
        if self.variety and self.n_classes < 2:
            raise ConfigError("variety head requires n_classes >= 2")

    def enabled(self) -> list[str]:
        return [
            name
            for name in ("time", "variety", "fungicide", "rot")
            if getattr(self, name)
        ]


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 8
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class PretextModel:
    input_dim: int
    encoder: list[DenseLayer]
    heads: dict[str, DenseLayer]
    head_config: HeadConfig

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].out_dim

    def copy(self) -> "PretextModel":
        return PretextModel(
            input_dim=self.input_dim,
            encoder=[layer.copy() for layer in self.encoder],
            heads={k: v.copy() for k, v in self.heads.items()},
            head_config=self.head_config,
        )


def build_model(input_dim: int, head_config: HeadConfig, seed: int) -> PretextModel:
    """He-initialized model with encoder dims (n, n//2, n//4)."""
    if input_dim < 4:
        raise ConfigError(f"input_dim must be >= 4, got {input_dim}")
    rng = np.random.default_rng(seed)
    seeds = iter(rng.integers(0, 2**63, size=8))
    h1, h2 = input_dim // 2, input_dim // 4
    encoder = [
        he_init(h1, input_dim, int(next(seeds))),
        he_init(h2, h1, int(next(seeds))),
    ]
    heads: dict[str, DenseLayer] = {}
    for name in head_config.enabled():
        out = head_config.n_classes if name == "variety" else 1
        heads[name] = he_init(out, h2, int(next(seeds)))
    return PretextModel(input_dim, encoder, heads, head_config)


def _as_batch(f: np.ndarray) -> tuple[np.ndarray, bool]:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        return f[None, :], True
    return f, False


def _forward_cached(model: PretextModel, batch: np.ndarray):
    a1 = dense_forward(model.encoder[0], batch)
    z1 = relu(a1)
    a2 = dense_forward(model.encoder[1], z1)
    z = relu(a2)
    pre = {name: dense_forward(layer, z) for name, layer in model.heads.items()}
    outputs = {}
    for name, p in pre.items():
        if name == "time":
            outputs[name] = p[..., 0]
        elif name == "variety":
            outputs[name] = sigmoid(p)
        else:
            outputs[name] = sigmoid(p[..., 0])
    return a1, z1, a2, z, pre, outputs


def forward(model: PretextModel, f: np.ndarray):
    """Latent code and per-head outputs for one feature vector or a batch.

    The time head output is a raw linear scalar; classification heads are
    sigmoid activations (per class for variety).
    """
    batch, single = _as_batch(f)
    if batch.shape[1] != model.input_dim:
        raise ValueError(
            f"feature dim {batch.shape[1]} != model input_dim {model.input_dim}"
        )
    _, _, _, z, _, outputs = _forward_cached(model, batch)
    if single:
        z = z[0]
        outputs = {k: v[0] for k, v in outputs.items()}
    return z, outputs


def encode(model: PretextModel, f: np.ndarray) -> np.ndarray:
    """Encoder-only forward pass; rows map to input rows in order."""
    return forward(model, f)[0]


def total_loss(head_outputs: dict, labels: dict, head_config: HeadConfig) -> float:
    """Sum of per-head losses for one record.

    MSE for time, BCE elsewhere. A rot label of None (a record without
    rot ground truth) contributes zero for the rot head.
    """
    total = 0.0
    for name in head_config.enabled():
        if name == "time":
            total += mse_loss(
                np.atleast_1d(head_outputs["time"]), np.atleast_1d(labels["time"])
            )[0]
        elif name == "variety":
            total += bce_loss(head_outputs["variety"], labels["variety"])[0]
        else:
            label = labels.get(name)
            if label is None:
                continue
            total += bce_loss(
                np.atleast_1d(head_outputs[name]), np.atleast_1d(float(label))
            )[0]
    return total


@dataclass
class BatchLabels:
    """Dense label arrays for a batch; rot_valid masks missing rot labels."""

    time: np.ndarray | None = None
    variety_onehot: np.ndarray | None = None
    fungicide: np.ndarray | None = None
    rot: np.ndarray | None = None
    rot_valid: np.ndarray | None = None

    @classmethod
    def from_set(cls, feature_set: FeatureSet, head_config: HeadConfig):
        n = len(feature_set)
        out = cls()
        if head_config.time:
            out.time = np.array([r.time_norm for r in feature_set.records])
        if head_config.variety:
            v = head_config.n_classes
            ids = np.array([r.variety_id for r in feature_set.records])
            if ids.size and ids.max() >= v:
                raise ConfigError(
                    f"variety id {ids.max()} out of range for {v}-class head"
                )
            onehot = np.zeros((n, v))
            onehot[np.arange(n), ids] = 1.0
            out.variety_onehot = onehot
        if head_config.fungicide:
            out.fungicide = np.array(
                [float(r.fungicide) for r in feature_set.records]
            )
        if head_config.rot:
            out.rot_valid = np.array(
                [r.rot is not None for r in feature_set.records]
            )
            if not out.rot_valid.any():
                raise ConfigError("rot head enabled but no record has a rot label")
            out.rot = np.array(
                [float(r.rot) if r.rot is not None else 0.0 for r in feature_set.records]
            )
        return out

    def subset(self, idx) -> "BatchLabels":
        pick = lambda a: None if a is None else a[idx]
        return BatchLabels(
            time=pick(self.time),
            variety_onehot=pick(self.variety_onehot),
            fungicide=pick(self.fungicide),
            rot=pick(self.rot),
            rot_valid=pick(self.rot_valid),
        )


def _params_dict(model: PretextModel) -> dict[str, np.ndarray]:
    params = {
        "enc1.weights": model.encoder[0].weights,
        "enc1.bias": model.encoder[0].bias,
        "enc2.weights": model.encoder[1].weights,
        "enc2.bias": model.encoder[1].bias,
    }
    for name, layer in model.heads.items():
        params[f"head.{name}.weights"] = layer.weights
        params[f"head.{name}.bias"] = layer.bias
    return params


def _apply_params(model: PretextModel, params: dict[str, np.ndarray]) -> None:
    model.encoder[0] = DenseLayer(params["enc1.weights"], params["enc1.bias"])
    model.encoder[1] = DenseLayer(params["enc2.weights"], params["enc2.bias"])
    for name in model.heads:
        model.heads[name] = DenseLayer(
            params[f"head.{name}.weights"], params[f"head.{name}.bias"]
        )


def loss_and_grads(
    model: PretextModel, batch: np.ndarray, labels: BatchLabels
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean total loss and its gradient for every parameter.

    The loss is the mean over records of the per-record head-loss sum;
    rot-invalid records contribute nothing to the rot term.
    """
    b = batch.shape[0]
    a1, z1, a2, z, pre, outputs = _forward_cached(model, batch)

    loss = 0.0
    d_pre: dict[str, np.ndarray] = {}
    cfg = model.head_config
    if cfg.time:
        o = outputs["time"]
        diff = o - labels.time
        loss += float(np.mean(diff * diff))
        d_pre["time"] = (2.0 * diff / b)[:, None]
    if cfg.variety:
        p = outputs["variety"]
        y = labels.variety_onehot
        pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        v = p.shape[1]
        loss += float(
            np.mean(
                -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc), axis=1)
            )
        )
        unclamped = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
        d_pre["variety"] = np.where(unclamped, p - y, 0.0) / (v * b)
    for name in ("fungicide", "rot"):
        if not getattr(cfg, name):
            continue
        p = outputs[name]
        y = labels.fungicide if name == "fungicide" else labels.rot
        pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        per_record = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
        unclamped = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
        d = np.where(unclamped, p - y, 0.0)
        if name == "rot":
            per_record = per_record * labels.rot_valid
            d = d * labels.rot_valid
        loss += float(np.sum(per_record) / b)
        d_pre[name] = (d / b)[:, None]

    grads: dict[str, np.ndarray] = {}
    dz = np.zeros_like(z)
    for name, layer in model.heads.items():
        dp = d_pre[name]
        grads[f"head.{name}.weights"] = dp.T @ z
        grads[f"head.{name}.bias"] = dp.sum(axis=0)
        dz += dp @ layer.weights

    da2 = dz * (a2 > 0)
    grads["enc2.weights"] = da2.T @ z1
    grads["enc2.bias"] = da2.sum(axis=0)
    dz1 = da2 @ model.encoder[1].weights
    da1 = dz1 * (a1 > 0)
    grads["enc1.weights"] = da1.T @ batch
    grads["enc1.bias"] = da1.sum(axis=0)
    return loss, grads


def train(
    model: PretextModel, train_set: FeatureSet, cfg: TrainConfig
) -> tuple[PretextModel, list[float]]:
    """Adam training over shuffled mini-batches; returns per-epoch mean loss.

    Deterministic given the seed: same model, data, and config reproduce
    bit-identical parameters.
    """
    cfg.validate()
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if model.head_config.rot and train_set.scale is not Scale.BERRY:
        raise ConfigError("rot head requires berry-scale data")
    if model.head_config.variety and model.head_config.n_classes != len(
        train_set.class_names
    ):
        raise ConfigError(
            f"variety head has {model.head_config.n_classes} classes but the "
            f"set defines {len(train_set.class_names)}"
        )

    features = train_set.feature_matrix()
    labels = BatchLabels.from_set(train_set, model.head_config)
    model = model.copy()
    params = _params_dict(model)
    state = AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n = features.shape[0]

    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            _apply_params(model, params)
            loss, grads = loss_and_grads(model, features[idx], labels.subset(idx))
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            epoch_loss += loss * idx.size
            params, state = adam_step(params, grads, state)
        history.append(epoch_loss / n)
    _apply_params(model, params)
    return model, history


@dataclass(frozen=True)
class Predictions:
    time_norm: float | None
    time_days: float | None
    variety_id: int | None
    fungicide: bool | None
    rot: bool | None


def predict(model: PretextModel, f: np.ndarray, span_days: float) -> Predictions:
    """Decode head outputs into label-space predictions.

    Time is clamped to [0, 1] and rescaled to days; variety is the argmax
    over per-class sigmoid outputs (ties -> lowest index); boolean heads
    threshold at 0.5, with exactly 0.5 predicting positive.
    """
    _, outputs = forward(model, f)
    cfg = model.head_config
    t_norm = float(np.clip(outputs["time"], 0.0, 1.0)) if cfg.time else None
    return Predictions(
        time_norm=t_norm,
        time_days=None if t_norm is None else t_norm * span_days,
        variety_id=int(np.argmax(outputs["variety"])) if cfg.variety else None,
        fungicide=bool(outputs["fungicide"] >= 0.5) if cfg.fungicide else None,
        rot=bool(outputs["rot"] >= 0.5) if cfg.rot else None,
    )


def predict_batch(model: PretextModel, features: np.ndarray, span_days: float):
    """Vectorized predict over rows; returns arrays keyed like Predictions."""
    _, outputs = forward(model, np.atleast_2d(features))
    cfg = model.head_config
    out: dict[str, np.ndarray] = {}
    if cfg.time:
        t = np.clip(outputs["time"], 0.0, 1.0)
        out["time_norm"] = t
        out["time_days"] = t * span_days
    if cfg.variety:
        out["variety_id"] = np.argmax(outputs["variety"], axis=1)
    if cfg.fungicide:
        out["fungicide"] = outputs["fungicide"] >= 0.5
    if cfg.rot:
        out["rot"] = outputs["rot"] >= 0.5
    return out


def _layer_to_json(layer: DenseLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}


def _layer_from_json(doc: dict) -> DenseLayer:
    return DenseLayer(np.array(doc["weights"], dtype=np.float64),
                      np.array(doc["bias"], dtype=np.float64))


def model_to_json(model: PretextModel) -> str:
    doc = {
        "input_dim": model.input_dim,
        "head_config": {
            "time": model.head_config.time,
            "variety": model.head_config.variety,
            "fungicide": model.head_config.fungicide,
            "rot": model.head_config.rot,
            "n_classes": model.head_config.n_classes,
        },
        "encoder": [_layer_to_json(l) for l in model.encoder],
        "heads": {k: _layer_to_json(v) for k, v in model.heads.items()},
    }
    return json.dumps(doc)


def model_from_json(text: str) -> PretextModel:
    doc = json.loads(text)
    cfg = HeadConfig(**doc["head_config"])
    encoder = [_layer_from_json(l) for l in doc["encoder"]]
    heads = {k: _layer_from_json(v) for k, v in doc["heads"].items()}
    model = PretextModel(int(doc["input_dim"]), encoder, heads, cfg)
    _check_dims(model)
    return model


def _check_dims(model: PretextModel) -> None:
    n = model.input_dim
    e1, e2 = model.encoder
    if e1.in_dim != n or e1.out_dim != n // 2 or e2.in_dim != n // 2 or e2.out_dim != n // 4:
        raise ConfigError(
            f"encoder dims {e1.in_dim}->{e1.out_dim}->{e2.out_dim} do not "
            f"follow the n, n//2, n//4 rule for n={n}"
        )
    if set(model.heads) != set(model.head_config.enabled()):
        raise ConfigError("head layers do not match the head configuration")
    for name, layer in model.heads.items():
        expect = model.head_config.n_classes if name == "variety" else 1
        if layer.in_dim != n // 4 or layer.out_dim != expect:
            raise ConfigError(
                f"head {name!r} has shape {layer.out_dim}x{layer.in_dim}, "
                f"expected {expect}x{n // 4}"
            )


def save_model(model: PretextModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> PretextModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read())
