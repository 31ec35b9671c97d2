"""Minimal dense-network engine: layers, losses, Adam.

Everything runs at float64 with explicit per-layer backward functions;
the architectures built on top of this are small and fixed, so there is
no graph machinery. All functions are pure; parameter containers are
value-semantic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

BCE_CLAMP = 1e-7


@dataclass
class DenseLayer:
    """Fully connected layer: ``y = weights @ x + bias``."""

    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != out_dim {self.weights.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericError("non-finite layer parameters")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy())


def he_init(out_dim: int, in_dim: int, seed: int) -> DenseLayer:
    """He-initialized layer: N(0, 2/in_dim) weights, zero bias."""
    if out_dim <= 0 or in_dim <= 0:
        raise ValueError("layer dimensions must be positive")
    rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / in_dim)
    return DenseLayer(rng.normal(0.0, std, size=(out_dim, in_dim)), np.zeros(out_dim))


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to a vector (in_dim,) or batch (n, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input dim {x.shape[-1]} != layer in_dim {layer.in_dim}")
    return x @ layer.weights.T + layer.bias


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def sigmoid(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    # Split by sign so exp never overflows.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.size
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / n) * diff


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross entropy and its gradient with respect to ``pred``.

    Predictions are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before the logs;
    the gradient is taken at the clamped value.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.size
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (p - target) / (p * (1.0 - p)) / n
    return float(loss), grad


@dataclass
class AdamState:
    """Adam moments keyed by parameter name, plus the shared hyperparameters."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns fresh params and state."""
    t = state.step_count + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment.get(name, np.zeros_like(theta))
        v = state.second_moment.get(name, np.zeros_like(theta))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step_count=t,
        first_moment=new_m,
        second_moment=new_v,
    )
    return new_params, new_state
