"""2D manifold projection of latent codes, UMAP-style.

Stages: exact k-nearest-neighbor graph, fuzzy edge weights from a
per-point smoothed kernel, a low-dimensional curve fit, and stochastic
gradient optimization of the standard attraction/repulsion objective
with negative sampling. Fitted embeddings are immutable; unseen points
are mapped in with the training coordinates frozen.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit

from .errors import ConfigError, DataError

SMOOTH_TOLERANCE = 1e-5
GRAD_CLIP = 4.0


@dataclass
class EmbedConfig:
    """Projection hyperparameters (canonical defaults)."""

    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 500
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    repulsion_strength: float = 1.0
    init_std: float = 1e-2
    # out-of-sample refinement is a light polish on top of the
    # inverse-distance initialization; large steps only add sampling noise
    transform_epochs: int = 30
    transform_learning_rate: float = 0.002

    def validate(self) -> None:
        if self.n_neighbors < 1:
            raise ConfigError("n_neighbors must be >= 1")
        if self.min_dist <= 0:
            raise ConfigError("min_dist must be > 0")
        if self.n_epochs < 1 or self.transform_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")


def _pairwise_rows(query: np.ndarray, points: np.ndarray) -> np.ndarray:
    # direct differences, chunk-free at desk scale; matches the obvious
    # per-pair norm computation bit for bit
    diff = query[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def knn_graph(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors per point under the Euclidean metric.

    Returns (indices, distances), each of shape (n, k), neighbors sorted
    by distance with ties broken by lower index. Self is excluded.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the point count {n}")
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    # keep the (chunk, n, dim) difference tensor around 128 MB
    chunk = max(1, min(n, 2**24 // max(1, n * points.shape[1])))
    for start in range(0, n, chunk):
        rows = _pairwise_rows(points[start : start + chunk], points)
        for r in range(rows.shape[0]):
            i = start + r
            d = rows[r]
            d[i] = np.inf
            order = np.argsort(d, kind="stable")[:k]
            indices[i] = order
            distances[i] = d[order]
    return indices, distances


@dataclass
class FuzzyGraph:
    """Per-point neighbor structure and the symmetrized edge weights."""

    indices: np.ndarray  # (n, k)
    distances: np.ndarray  # (n, k)
    rho: np.ndarray  # (n,) distance to nearest neighbor
    sigma: np.ndarray  # (n,) smoothing bandwidth
    sigma_fallback: np.ndarray  # (n,) bool, True where the search did not converge
    weights: scipy.sparse.csr_matrix  # symmetric, values in (0, 1]

    @property
    def n_points(self) -> int:
        return self.indices.shape[0]


def _solve_sigma(row: np.ndarray, rho: float, target: float, n_iter: int = 64):
    """Binary search for sigma with sum_j exp(-max(0, d_j - rho)/sigma) = target."""
    shifted = np.maximum(row - rho, 0.0)
    lo, hi, mid = 0.0, np.inf, 1.0
    for _ in range(n_iter):
        psum = np.exp(-shifted / mid).sum()
        if abs(psum - target) < SMOOTH_TOLERANCE:
            return mid, False
        if psum > target:
            hi = mid
            mid = (lo + hi) / 2.0
        else:
            lo = mid
            mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
    fallback = float(np.mean(row))
    # all-duplicate rows have zero mean distance; any positive sigma gives
    # the same (unit) weights there
    return (fallback if fallback > 0 else 1.0), True


def fuzzy_weights(indices: np.ndarray, distances: np.ndarray, k: int) -> FuzzyGraph:
    """Fuzzy graph over a kNN structure.

    rho is the nearest-neighbor distance, so every point's closest edge
    carries directed weight exp(0) = 1. sigma is solved per point so the
    kernel mass hits log2(k); a non-convergent search falls back to the
    row's mean distance (flagged in the result). Directed weights are
    symmetrized as a + a' - a*a'.
    """
    n = indices.shape[0]
    target = np.log2(k)
    rho = distances[:, 0].copy()
    sigma = np.empty(n)
    fallback = np.zeros(n, dtype=bool)
    for i in range(n):
        sigma[i], fallback[i] = _solve_sigma(distances[i], rho[i], target)

    vals = np.exp(-np.maximum(distances - rho[:, None], 0.0) / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    directed = scipy.sparse.coo_matrix(
        (vals.ravel(), (rows, indices.ravel())), shape=(n, n)
    ).tocsr()
    transpose = directed.T.tocsr()
    weights = directed + transpose - directed.multiply(transpose)
    weights.sum_duplicates()
    return FuzzyGraph(indices, distances, rho, sigma, fallback, weights.tocsr())


def curve_params(min_dist: float) -> tuple[float, float]:
    """Least-squares (a, b) for 1/(1 + a d^(2b)) against the target curve
    that is 1 up to min_dist and exp(-(d - min_dist)) beyond, over (0, 3]."""
    if min_dist <= 0:
        raise ConfigError("min_dist must be > 0")
    d = np.linspace(0.0, 3.0, 301)[1:]
    y = np.where(d <= min_dist, 1.0, np.exp(-(d - min_dist)))
    (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2.0 * b)), d, y)
    return float(a), float(b)


@dataclass
class PlanarEmbedding:
    """A fitted 2D projection: training latents, coordinates, curve fit."""

    latents: np.ndarray  # (n, d) copies of the training latents
    coords: np.ndarray  # (n, 2)
    a: float
    b: float
    config: EmbedConfig
    seed: int
    sigma_fallback_count: int = 0

    def diameter(self) -> float:
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def _attract_grad(diff: np.ndarray, d2: np.ndarray, a: float, b: float) -> np.ndarray:
    coeff = np.zeros_like(d2)
    pos = d2 > 0
    coeff[pos] = (-2.0 * a * b * d2[pos] ** (b - 1.0)) / (1.0 + a * d2[pos] ** b)
    return np.clip(coeff[:, None] * diff, -GRAD_CLIP, GRAD_CLIP)


def _repulse_grad(
    diff: np.ndarray, d2: np.ndarray, a: float, b: float, gamma: float
) -> np.ndarray:
    coeff = np.zeros_like(d2)
    pos = d2 > 0
    coeff[pos] = (2.0 * gamma * b) / (
        (0.001 + d2[pos]) * (1.0 + a * d2[pos] ** b)
    )
    grad = np.clip(coeff[:, None] * diff, -GRAD_CLIP, GRAD_CLIP)
    # coincident points: push the head a fixed step so they separate
    grad[~pos] = GRAD_CLIP
    return grad


def _edge_arrays(weights: scipy.sparse.csr_matrix):
    coo = weights.tocoo()
    return (
        coo.row.astype(np.int64),
        coo.col.astype(np.int64),
        coo.data.astype(np.float64),
    )


def fit_embedding(
    latents: np.ndarray, graph: FuzzyGraph, config: EmbedConfig, seed: int
) -> PlanarEmbedding:
    """Optimize 2D coordinates for the fuzzy graph.

    Coordinates start from a seeded isotropic normal (std config.init_std)
    and follow per-epoch vectorized SGD: each edge fires on a schedule
    proportional to its weight (attraction, both ends move); each firing
    also draws negative samples that repel the edge head. The step size
    decays linearly to zero.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n = graph.n_points
    coords = rng.normal(0.0, config.init_std, size=(n, 2))
    a, b = curve_params(config.min_dist)

    head, tail, w = _edge_arrays(graph.weights)
    if w.size == 0:
        return PlanarEmbedding(
            np.array(latents, dtype=np.float64, copy=True), coords, a, b, config, seed,
            int(graph.sigma_fallback.sum()),
        )
    epochs_per_sample = w.max() / w
    next_sample = epochs_per_sample.copy()
    eps_per_negative = epochs_per_sample / config.negative_sample_rate
    next_negative = eps_per_negative.copy()
    n_epochs = config.n_epochs

    for epoch in range(n_epochs):
        alpha = config.learning_rate * (1.0 - epoch / n_epochs)
        due = next_sample <= epoch + 1
        if not np.any(due):
            continue
        h, t = head[due], tail[due]
        diff = coords[h] - coords[t]
        d2 = np.sum(diff * diff, axis=1)
        grad = _attract_grad(diff, d2, a, b) * alpha
        np.add.at(coords, h, grad)
        np.add.at(coords, t, -grad)
        next_sample[due] += epochs_per_sample[due]

        n_neg = ((epoch + 1 - next_negative[due]) / eps_per_negative[due]).astype(
            np.int64
        )
        n_neg = np.maximum(n_neg, 0)
        total = int(n_neg.sum())
        if total:
            heads_rep = np.repeat(h, n_neg)
            targets = rng.integers(0, n, size=total)
            diff = coords[heads_rep] - coords[targets]
            d2 = np.sum(diff * diff, axis=1)
            same = heads_rep == targets
            grad = _repulse_grad(diff, d2, a, b, config.repulsion_strength)
            grad[same] = 0.0
            np.add.at(coords, heads_rep, grad * alpha)
            next_negative[due] += n_neg * eps_per_negative[due]

    return PlanarEmbedding(
        np.array(latents, dtype=np.float64, copy=True),
        coords,
        a,
        b,
        config,
        seed,
        int(graph.sigma_fallback.sum()),
    )


def fit_planar_embedding(
    latents: np.ndarray, config: EmbedConfig | None = None, seed: int = 0
) -> PlanarEmbedding:
    """Convenience wrapper: kNN graph -> fuzzy weights -> optimized layout."""
    config = config or EmbedConfig()
    latents = np.asarray(latents, dtype=np.float64)
    k = min(config.n_neighbors, latents.shape[0] - 1)
    if k < 1:
        raise DataError("need at least two points to fit an embedding")
    indices, distances = knn_graph(latents, k)
    graph = fuzzy_weights(indices, distances, k)
    return fit_embedding(latents, graph, config, seed)


def _point_seed(latent: np.ndarray, seed: int) -> int:
    # content-derived seed: the refinement of one point must not depend on
    # how many other points are in the batch or in what order they appear
    digest = hashlib.blake2b(
        np.ascontiguousarray(latent, dtype=np.float64).tobytes(),
        digest_size=8,
        salt=str(seed).encode()[:16],
    ).digest()
    return int.from_bytes(digest, "little")


def transform_new(emb: PlanarEmbedding, new_latents: np.ndarray) -> np.ndarray:
    """Map unseen latents into the fitted plane.

    Each point starts at the fuzzy-weight average of its k nearest
    training latents' coordinates and is refined by the same objective
    with every training coordinate frozen. Points are processed
    independently, so results do not depend on batch composition.
    """
    if emb.latents.shape[0] == 0:
        raise DataError("embedding has no training points")
    new_latents = np.atleast_2d(np.asarray(new_latents, dtype=np.float64))
    cfg = emb.config
    k = min(cfg.n_neighbors, emb.latents.shape[0])
    target = np.log2(k)
    out = np.empty((new_latents.shape[0], 2))

    for i, latent in enumerate(new_latents):
        d = _pairwise_rows(latent[None, :], emb.latents)[0]
        order = np.argsort(d, kind="stable")[:k]
        nd = d[order]
        rho = nd[0]
        sigma, _ = _solve_sigma(nd, rho, target)
        w = np.exp(-np.maximum(nd - rho, 0.0) / sigma)
        anchors = emb.coords[order]
        # inverse-distance weights for the initial placement: a point that
        # coincides with a training latent starts at that latent's
        # coordinate instead of a neighborhood blend
        w_init = 1.0 / (nd + 1e-9 * max(nd[-1], 1e-30))
        pos = (w_init[:, None] * anchors).sum(axis=0) / w_init.sum()

        rng = np.random.default_rng(_point_seed(latent, emb.seed))
        eps_per_sample = w.max() / w
        next_sample = eps_per_sample.copy()
        eps_per_negative = eps_per_sample / cfg.negative_sample_rate
        next_negative = eps_per_negative.copy()
        n_epochs = cfg.transform_epochs
        for epoch in range(n_epochs):
            alpha = cfg.transform_learning_rate * (1.0 - epoch / n_epochs)
            due = next_sample <= epoch + 1
            if np.any(due):
                diff = pos[None, :] - anchors[due]
                d2 = np.sum(diff * diff, axis=1)
                pos = pos + (_attract_grad(diff, d2, emb.a, emb.b) * alpha).sum(axis=0)
                next_sample[due] += eps_per_sample[due]

                n_neg = (
                    (epoch + 1 - next_negative[due]) / eps_per_negative[due]
                ).astype(np.int64)
                total = int(np.maximum(n_neg, 0).sum())
                if total:
                    targets = rng.integers(0, emb.coords.shape[0], size=total)
                    diff = pos[None, :] - emb.coords[targets]
                    d2 = np.sum(diff * diff, axis=1)
                    rep = _repulse_grad(diff, d2, emb.a, emb.b, cfg.repulsion_strength)
                    pos = pos + (rep * alpha).sum(axis=0)
                    next_negative[due] += np.maximum(n_neg, 0) * eps_per_negative[due]
        out[i] = pos
    return out


def embedding_to_json(emb: PlanarEmbedding) -> str:
    doc = {
        "config": {
            "n_neighbors": emb.config.n_neighbors,
            "min_dist": emb.config.min_dist,
            "n_epochs": emb.config.n_epochs,
            "negative_sample_rate": emb.config.negative_sample_rate,
            "learning_rate": emb.config.learning_rate,
            "repulsion_strength": emb.config.repulsion_strength,
            "init_std": emb.config.init_std,
            "transform_epochs": emb.config.transform_epochs,
            "transform_learning_rate": emb.config.transform_learning_rate,
        },
        "a": emb.a,
        "b": emb.b,
        "seed": emb.seed,
        "sigma_fallback_count": emb.sigma_fallback_count,
        "latents": emb.latents.tolist(),
        "coords": emb.coords.tolist(),
    }
    return json.dumps(doc)


def embedding_from_json(text: str) -> PlanarEmbedding:
    doc = json.loads(text)
    latents = np.array(doc["latents"], dtype=np.float64)
    coords = np.array(doc["coords"], dtype=np.float64)
    if latents.shape[0] != coords.shape[0]:
        raise ConfigError("latent and coordinate counts differ")
    if doc["a"] <= 0 or doc["b"] <= 0:
        raise ConfigError("curve parameters must be positive")
    return PlanarEmbedding(
        latents=latents,
        coords=coords,
        a=float(doc["a"]),
        b=float(doc["b"]),
        config=EmbedConfig(**doc["config"]),
        seed=int(doc["seed"]),
        sigma_fallback_count=int(doc.get("sigma_fallback_count", 0)),
    )


def save_embedding(emb: PlanarEmbedding, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(embedding_to_json(emb))


def load_embedding(path) -> PlanarEmbedding:
    with open(path, "r", encoding="utf-8") as fh:
        return embedding_from_json(fh.read())
