"""Growth-trajectory modeling in the embedded plane.

Per-track displacements over a session lag form position-velocity
samples [x v] in R^4. A Gaussian mixture fitted to those samples is a
time-invariant summary of how tracks move through the plane: conditioning
it on a position yields a velocity distribution there, and repeatedly
integrating that velocity rolls out a predicted trajectory.

The mixture is fitted by MAP expectation-maximization with a Dirichlet
prior on the weights (concentration alpha, default 1/K) and a ridge on
every covariance; components whose weight collapses are pruned, which
lets the effective component count select itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError, NumericError, OutOfSupportError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Track:
    """One tracked patch cell or berry: ordered 2D points over sessions."""

    track_id: int
    sessions: np.ndarray  # (t,) strictly increasing session indices
    points: np.ndarray  # (t, 2)
    variety_id: int = 0
    fungicide: bool = False

    def __post_init__(self):
        self.sessions = np.asarray(self.sessions, dtype=np.int64)
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ConfigError("track points must have shape (t, 2)")
        if self.sessions.shape[0] != self.points.shape[0]:
            raise ConfigError("session and point counts differ")
        if self.sessions.shape[0] < 2:
            raise ConfigError("a track needs at least two points")
        if np.any(np.diff(self.sessions) <= 0):
            raise ConfigError("session indices must be strictly increasing")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PVSample:
    """Position paired with the displacement seen ``lag`` entries later."""

    position: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)
    track_id: int
    session_index: int

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def compute_velocities(track: Track, lag: int = 1) -> list[PVSample]:
    """Velocity set of a track: v_t = x_{t+lag} - x_t for t = 0 .. T-lag-1.

    Produces exactly T - lag samples; raises if the track is too short.
    """
    if lag < 1:
        raise ConfigError("lag must be >= 1")
    t_len = len(track)
    if t_len <= lag:
        raise DataError(
            f"track {track.track_id} has {t_len} points, need more than lag={lag}"
        )
    samples = []
    for t in range(t_len - lag):
        samples.append(
            PVSample(
                position=track.points[t].copy(),
                velocity=track.points[t + lag] - track.points[t],
                track_id=track.track_id,
                session_index=int(track.sessions[t]),
            )
        )
    return samples


def stack_samples(samples: list[PVSample]) -> np.ndarray:
    if not samples:
        raise DataError("no position-velocity samples")
    return np.stack([s.stacked() for s in samples])


@dataclass
class FitDiagnostics:
    final_penalized_ll: float = -np.inf
    n_iter: int = 0
    pruned_count: int = 0
    ll_history: list[float] = field(default_factory=list)
    prune_iterations: list[int] = field(default_factory=list)
    converged: bool = False


@dataclass
class GaussianMixture:
    """Weights, means, covariances; dimension D is generic (4 for [x v])."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _gauss_logpdf(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of rows of ``points`` under N(mean, cov), via Cholesky."""
    try:
        chol = scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is not positive definite: {exc}") from exc
    dim = mean.shape[0]
    solved = scipy.linalg.solve_triangular(
        chol, (points - mean).T, lower=True
    )
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    quad = np.sum(solved * solved, axis=0)
    return -0.5 * (dim * LOG_2PI + log_det + quad)


def _logsumexp(rows: np.ndarray) -> np.ndarray:
    top = rows.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    out = safe + np.log(np.exp(rows - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(top), out, -np.inf)


def _kmeans_pp_means(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial means by squared-distance sampling."""
    n = data.shape[0]
    means = np.empty((k, data.shape[1]))
    means[0] = data[rng.integers(n)]
    d2 = np.sum((data - means[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            means[j:] = data[rng.integers(n, size=k - j)]
            break
        means[j] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((data - means[j]) ** 2, axis=1))
    return means


def fit_bgmm(
    data: np.ndarray,
    n_components: int,
    seed: int = 0,
    alpha: float | None = None,
    ridge: float = 1e-6,
    weight_floor: float = 1e-3,
    max_iter: int = 200,
    rel_tol: float = 1e-6,
) -> GaussianMixture:
    """MAP-EM Gaussian mixture with a Dirichlet weight prior.

    The penalized log-likelihood (data log-likelihood plus
    (alpha - 1) * sum(log w_k)) is non-decreasing across iterations
    between prune events; pruning removes components whose posterior
    weight falls to zero or below ``weight_floor`` and renormalizes.
    Deterministic per seed (k-means++-style mean seeding).

    ``data`` may be an (N, D) array or a list of :class:`PVSample`.
    """
    if isinstance(data, list) and data and isinstance(data[0], PVSample):
        data = stack_samples(data)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ConfigError("data must be 2-D (n_samples, dim)")
    n, dim = data.shape
    if n_components < 1:
        raise ConfigError("n_components must be >= 1")
    if n_components > n:
        raise ConfigError(
            f"n_components={n_components} exceeds sample count {n}"
        )
    if alpha is None:
        alpha = 1.0 / n_components

    rng = np.random.default_rng(seed)
    k = n_components
    means = _kmeans_pp_means(data, k, rng)
    base_cov = np.cov(data.T, bias=True).reshape(dim, dim) + ridge * np.eye(dim)
    # one hard-assignment pass gives each component a local covariance;
    # a shared global one misbehaves badly when outliers inflate it
    assign = np.argmin(
        np.sum((data[:, None, :] - means[None, :, :]) ** 2, axis=2), axis=1
    )
    covs = np.empty((k, dim, dim))
    weights = np.empty(k)
    for j in range(k):
        members = data[assign == j]
        weights[j] = max(members.shape[0], 1)
        if members.shape[0] > dim:
            local = np.cov(members.T, bias=True).reshape(dim, dim)
            covs[j] = 0.5 * (local + local.T) + ridge * np.eye(dim)
        else:
            covs[j] = base_cov
    weights = weights / weights.sum()

    diag = FitDiagnostics()
    prev_ll = -np.inf
    prev_k = k
    eye = ridge * np.eye(dim)

    for iteration in range(max_iter):
        log_prob = np.empty((n, k))
        for j in range(k):
            try:
                log_prob[:, j] = np.log(weights[j]) + _gauss_logpdf(
                    data, means[j], covs[j]
                )
            except NumericError as exc:
                raise NumericError(f"component {j}: {exc}") from exc
        log_norm = _logsumexp(log_prob)
        # exact summation: the monotonicity contract is tighter than what
        # naive accumulation noise allows at desk-scale sample counts
        penalty = (alpha - 1.0) * math.fsum(np.log(weights))
        ll = math.fsum(log_norm) + penalty
        diag.ll_history.append(ll)
        diag.n_iter = iteration + 1

        if k == prev_k and np.isfinite(prev_ll):
            if abs(ll - prev_ll) <= rel_tol * abs(prev_ll):
                diag.converged = True
                break
        prev_ll, prev_k = ll, k

        resp = np.exp(log_prob - log_norm[:, None])
        counts = resp.sum(axis=0)
        raw = counts + alpha - 1.0
        new_weights = np.maximum(raw, 0.0)
        if new_weights.sum() <= 0:
            new_weights = counts
        new_weights = new_weights / new_weights.sum()

        keep = new_weights >= weight_floor
        if not np.any(keep):
            keep[np.argmax(new_weights)] = True
        for j in np.flatnonzero(keep):
            denom = counts[j]
            if denom <= 0:
                keep[j] = False
                continue
            means[j] = resp[:, j] @ data / denom
            centered = data - means[j]
            scatter = (resp[:, j][:, None] * centered).T @ centered / denom
            covs[j] = 0.5 * (scatter + scatter.T) + eye

        if not np.all(keep):
            dropped = int(np.sum(~keep))
            diag.pruned_count += dropped
            diag.prune_iterations.append(iteration)
            means = means[keep]
            covs = covs[keep]
            new_weights = new_weights[keep]
            new_weights = new_weights / new_weights.sum()
            k = int(keep.sum())
        weights = new_weights

    diag.final_penalized_ll = diag.ll_history[-1] if diag.ll_history else -np.inf
    return GaussianMixture(weights, means, covs, diag)


@dataclass
class ConditionalVelocity:
    """Mixture over velocity at a fixed position: P(V | X = x0)."""

    weights: np.ndarray  # (K',)
    means: np.ndarray  # (K', 2)
    covariances: np.ndarray  # (K', 2, 2)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def condition_velocity(gmm: GaussianMixture, x0: np.ndarray) -> ConditionalVelocity:
    """Condition a position-velocity mixture on position ``x0``.

    Per component, with mu = (mu_x, mu_v) and Sigma split into blocks:
    the conditional mean is mu_v + S_vx S_xx^-1 (x0 - mu_x), the
    conditional covariance S_vv - S_vx S_xx^-1 S_xv, and the new weight
    is proportional to w_k * N(x0; mu_x, S_xx).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    q = x0.shape[0]
    if q >= gmm.dim:
        raise ConfigError(
            f"conditioning dimension {q} must be below mixture dim {gmm.dim}"
        )
    k = gmm.n_components
    rest = gmm.dim - q
    cond_means = np.empty((k, rest))
    cond_covs = np.empty((k, rest, rest))
    log_w = np.empty(k)
    for j in range(k):
        mu_x, mu_v = gmm.means[j, :q], gmm.means[j, q:]
        sigma = gmm.covariances[j]
        s_xx = sigma[:q, :q]
        s_xv = sigma[:q, q:]
        s_vx = sigma[q:, :q]
        s_vv = sigma[q:, q:]
        try:
            chol = scipy.linalg.cho_factor(s_xx, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(
                f"component {j}: singular position block: {exc}"
            ) from exc
        gain = scipy.linalg.cho_solve(chol, s_xv).T  # S_vx S_xx^-1
        cond_means[j] = mu_v + gain @ (x0 - mu_x)
        cov = s_vv - gain @ s_xv
        cond_covs[j] = 0.5 * (cov + cov.T)
        log_w[j] = np.log(gmm.weights[j]) + _gauss_logpdf(
            x0[None, :], mu_x, s_xx
        )[0]

    top = log_w.max()
    # below the smallest normal float every unnormalized weight would
    # underflow to zero; treat the query as outside the mixture's support
    if not np.isfinite(top) or top < np.log(np.finfo(np.float64).tiny):
        raise OutOfSupportError(
            f"position {x0.tolist()} is outside the support of every component"
        )
    w = np.exp(log_w - top)
    return ConditionalVelocity(w / w.sum(), cond_means, cond_covs)


@dataclass
class RolloutResult:
    points: np.ndarray  # (m, 2), starts at x0
    status: str  # "ok" or "truncated"
    requested_steps: int
    lag: int = 1

    @property
    def completed_steps(self) -> int:
        return self.points.shape[0] - 1


def rollout(
    gmm: GaussianMixture,
    x0: np.ndarray,
    steps: int,
    mode: str = "mean",
    seed: int | None = None,
    lag: int = 1,
) -> RolloutResult:
    """Integrate the conditional velocity field from ``x0``.

    Each step conditions the mixture at the current position, takes the
    conditional mixture mean (mode="mean") or a seeded component draw
    (mode="sample"), and advances; every step spans ``lag`` session
    intervals. If conditioning fails out of support, the partial path is
    returned with status "truncated".
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if mode not in ("mean", "sample"):
        raise ConfigError(f"unknown rollout mode {mode!r}")
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=np.float64).copy()
    path = [x.copy()]
    status = "ok"
    for _ in range(steps):
        try:
            cond = condition_velocity(gmm, x)
        except OutOfSupportError:
            status = "truncated"
            break
        if mode == "mean":
            v = cond.mean()
        else:
            j = rng.choice(cond.weights.shape[0], p=cond.weights)
            chol = scipy.linalg.cholesky(cond.covariances[j], lower=True)
            v = cond.means[j] + chol @ rng.standard_normal(2)
        x = x + v
        path.append(x.copy())
    return RolloutResult(np.stack(path), status, steps, lag)


def tracks_to_samples(tracks: list[Track], lag: int = 1):
    """Velocity samples for every track long enough; returns the samples
    and the ids of tracks skipped for being shorter than lag + 1."""
    samples: list[PVSample] = []
    skipped: list[int] = []
    for track in tracks:
        if len(track) <= lag:
            skipped.append(track.track_id)
            continue
        samples.extend(compute_velocities(track, lag))
    return samples, skipped


def fit_group_mixtures(
    tracks: list[Track],
    lag: int = 1,
    n_components: int = 8,
    seed: int = 0,
    pooled: bool = False,
    **fit_kwargs,
) -> dict[tuple[int, bool] | str, GaussianMixture]:
    """One mixture per (variety, fungicide) group, or a single pooled fit.

    Tracks shorter than lag + 1 are skipped; a group whose samples all
    vanish is dropped. K is capped at the group's sample count.
    """
    groups: dict = {}
    if pooled:
        groups["pooled"] = tracks
    else:
        for track in tracks:
            groups.setdefault((track.variety_id, track.fungicide), []).append(track)

    out = {}
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        samples, _ = tracks_to_samples(members, lag)
        if not samples:
            continue
        data = stack_samples(samples)
        k = min(n_components, data.shape[0])
        out[key] = fit_bgmm(data, k, seed=seed, **fit_kwargs)
    if not out:
        raise DataError("every track was shorter than lag + 1; nothing to fit")
    return out


def mixture_to_json(gmm: GaussianMixture) -> str:
    doc = {
        "n_components": gmm.n_components,
        "dim": gmm.dim,
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covariances": gmm.covariances.reshape(gmm.n_components, -1).tolist(),
        "diagnostics": {
            "final_penalized_ll": gmm.diagnostics.final_penalized_ll,
            "n_iter": gmm.diagnostics.n_iter,
            "pruned_count": gmm.diagnostics.pruned_count,
            "converged": gmm.diagnostics.converged,
        },
    }
    return json.dumps(doc)


def mixture_from_json(text: str) -> GaussianMixture:
    doc = json.loads(text)
    k, dim = int(doc["n_components"]), int(doc["dim"])
    weights = np.array(doc["weights"], dtype=np.float64)
    means = np.array(doc["means"], dtype=np.float64)
    covs = np.array(doc["covariances"], dtype=np.float64).reshape(k, dim, dim)
    if weights.shape != (k,) or means.shape != (k, dim):
        raise ConfigError("mixture document has inconsistent shapes")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigError("mixture weights do not sum to 1")
    d = doc.get("diagnostics", {})
    diag = FitDiagnostics(
        final_penalized_ll=float(d.get("final_penalized_ll", -np.inf)),
        n_iter=int(d.get("n_iter", 0)),
        pruned_count=int(d.get("pruned_count", 0)),
        converged=bool(d.get("converged", False)),
    )
    return GaussianMixture(weights, means, covs, diag)


def save_mixture(gmm: GaussianMixture, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mixture_to_json(gmm))


def load_mixture(path) -> GaussianMixture:
    with open(path, "r", encoding="utf-8") as fh:
        return mixture_from_json(fh.read())


def responsibilities(gmm: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Posterior component probabilities for each row of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    log_prob = np.empty((points.shape[0], gmm.n_components))
    for j in range(gmm.n_components):
        log_prob[:, j] = np.log(gmm.weights[j]) + _gauss_logpdf(
            points, gmm.means[j], gmm.covariances[j]
        )
    return np.exp(log_prob - _logsumexp(log_prob)[:, None])


def sample_mixture(
    gmm: GaussianMixture, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n points from the mixture (used by demos and test oracles)."""
    counts = rng.multinomial(n, gmm.weights)
    chunks = []
    for j, c in enumerate(counts):
        if c == 0:
            continue
        chol = scipy.linalg.cholesky(gmm.covariances[j], lower=True)
        chunks.append(gmm.means[j] + rng.standard_normal((c, gmm.dim)) @ chol.T)
    out = np.concatenate(chunks)
    return out[rng.permutation(n)]
