"""Gaussian mixture density estimation for weighted particle clouds.

Fitted by weighted EM with deterministic seeding.  The mixture exposes the
two quantities the learners need: log-density and its spatial gradient (the
score).  Covariances are kept strictly positive definite by a jitter term and
an eigenvalue floor, and their Cholesky factors are cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

JITTER = 1e-6
VARIANCE_FLOOR = 1e-6
COLLAPSE_WEIGHT = 1e-10
MAX_REINITS = 3
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianMixture:
    """A k-component full-covariance Gaussian mixture in R^d."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    cholesky_factors: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.covariances.shape[0] != k:
            raise ValueError("weights, means and covariances must agree on component count")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be a probability vector")
        if self.cholesky_factors is None:
            self.cholesky_factors = np.stack(
                [cholesky(c, lower=True) for c in self.covariances]
            )

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_log_densities(self, x: np.ndarray) -> np.ndarray:
        """(B, k) matrix of per-component Gaussian log-densities."""
        b = x.shape[0]
        out = np.empty((b, self.n_components))
        for j in range(self.n_components):
            chol = self.cholesky_factors[j]
            diff = x - self.means[j]
            solved = solve_triangular(chol, diff.T, lower=True)
            quad = (solved**2).sum(axis=0)
            log_det = 2.0 * np.log(np.diag(chol)).sum()
            out[:, j] = -0.5 * (self.dim * _LOG_2PI + log_det + quad)
        return out

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "GaussianMixture":
        return cls(
            np.asarray(data["weights"]),
            np.asarray(data["means"]),
            np.asarray(data["covariances"]),
        )


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"expected point of dim {dim}, got shape {x.shape}")
        return x[None, :], True
    return x, False


def log_density(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray | float:
    """Log of the mixture density, evaluated stably via log-sum-exp."""
    xb, single = _as_batch(x, gmm.dim)
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    out = logsumexp(log_w[None, :] + gmm._component_log_densities(xb), axis=1)
    return float(out[0]) if single else out


def score(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Gradient of log-density: responsibility-weighted sum of
    Sigma_j^{-1} (mu_j - x)."""
    xb, single = _as_batch(x, gmm.dim)
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    log_comp = log_w[None, :] + gmm._component_log_densities(xb)
    resp = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
    out = np.zeros_like(xb)
    for j in range(gmm.n_components):
        pulled = cho_solve(
            (gmm.cholesky_factors[j], True), (gmm.means[j] - xb).T
        ).T
        out += resp[:, j][:, None] * pulled
    return out[0] if single else out


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    """Symmetrize, add jitter, clip eigenvalues at the variance floor."""
    cov = 0.5 * (cov + cov.T) + JITTER * np.eye(cov.shape[0])
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < VARIANCE_FLOOR:
        vals = np.maximum(vals, VARIANCE_FLOOR)
        cov = (vecs * vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


def _kmeans_pp_means(
    points: np.ndarray, weights: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: centers drawn proportionally to weight times squared
    distance to the nearest already-chosen center."""
    n = points.shape[0]
    chosen = [int(rng.choice(n, p=weights))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        probs = weights * d2
        total = probs.sum()
        if total <= 0:
            idx = int(rng.choice(n, p=weights))
        else:
            idx = int(rng.choice(n, p=probs / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _global_covariance(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = weights @ points
    centered = points - mean
    return _floor_covariance((weights[:, None] * centered).T @ centered)


def fit_gmm(
    points: np.ndarray,
    weights: np.ndarray | None = None,
    k: int = 10,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> GaussianMixture:
    """Fit a k-component mixture to weighted points by EM.

    Deterministic given the seed.  The weighted log-likelihood is asserted to
    be non-decreasing on every iteration; components whose weight collapses
    below 1e-10 are re-seeded from the data at most three times before the
    fit is abandoned with an error.

    Args:
        points: (N, d) particle positions.
        weights: (N,) probability weights; uniform when omitted.
        k: component count, at most N.
        seed: RNG seed for k-means++ seeding and collapse re-seeding.
        max_iters: EM iteration cap.
        tol: stop once the log-likelihood improves by less than this.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be (N, d), got shape {points.shape}")
    n = points.shape[0]
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=np.float64)
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xD1F,)))

    global_cov = _global_covariance(points, weights)
    means = _kmeans_pp_means(points, weights, k, rng)
    covs = np.repeat(global_cov[None, :, :], k, axis=0)
    mix = np.full(k, 1.0 / k)
    gmm = GaussianMixture(mix, means, covs)

    prev_ll = -np.inf
    reinits = 0
    for _ in range(max_iters):
        with np.errstate(divide="ignore"):
            log_comp = np.log(gmm.weights)[None, :] + gmm._component_log_densities(points)
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(weights @ log_norm)
        if not ll >= prev_ll - 1e-8:
            raise AssertionError(
                f"EM log-likelihood decreased: {prev_ll!r} -> {ll!r}"
            )
        improved = ll - prev_ll
        prev_ll = ll

        resp = np.exp(log_comp - log_norm[:, None])
        wr = weights[:, None] * resp
        nj = wr.sum(axis=0)
        if nj.min() < COLLAPSE_WEIGHT:
            reinits += 1
            if reinits > MAX_REINITS:
                raise RuntimeError(
                    f"mixture component collapsed {reinits} times; "
                    "reduce k or provide more spread-out data"
                )
            dead = np.nonzero(nj < COLLAPSE_WEIGHT)[0]
            for j in dead:
                idx = int(rng.choice(n, p=weights))
                gmm.means[j] = points[idx]
                gmm.covariances[j] = global_cov
                gmm.cholesky_factors[j] = cholesky(global_cov, lower=True)
            mix = gmm.weights.copy()
            mix[dead] = 1.0 / k
            gmm.weights = mix / mix.sum()
            prev_ll = -np.inf  # restart the monotonicity baseline after surgery
            continue

        new_means = (wr.T @ points) / nj[:, None]
        new_covs = np.empty_like(gmm.covariances)
        for j in range(k):
            centered = points - new_means[j]
            cov = (wr[:, j][:, None] * centered).T @ centered / nj[j]
            new_covs[j] = _floor_covariance(cov)
        gmm = GaussianMixture(nj / nj.sum(), new_means, new_covs)

        if improved < tol and np.isfinite(improved):
            break
    return gmm
