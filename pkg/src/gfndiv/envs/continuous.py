"""Two-dimensional continuous targets: a Gaussian mixture grid and the banana."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .base import ContinuousEnv

LOG_2PI = np.log(2.0 * np.pi)
BANANA_COV = np.array([[1.0, 0.9], [0.9, 1.0]])


def grid_centers(side: int = 3) -> np.ndarray:
    return np.array([(i, j) for i in range(side) for j in range(side)], dtype=np.float64)


class GaussianMixtureEnv(ContinuousEnv):
    """Target ``sum_k w_k N(mu_k, var * I)``; defaults to the 3x3 grid, var 0.1."""

    kind = "gm"

    def __init__(self, centers=None, variance: float = 0.1, weights=None):
        centers = grid_centers() if centers is None else np.asarray(centers, dtype=np.float64)
        k, d = centers.shape
        weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
        if variance <= 0:
            raise ConfigurationError("mixture variance must be positive")
        if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be non-negative and sum to 1")
        self.centers, self.variance, self.weights, self.d = centers, float(variance), weights, d

    def log_density(self, xs):
        xs = np.atleast_2d(xs)
        sq = ((xs[:, None, :] - self.centers[None]) ** 2).sum(-1)
        comp = np.log(self.weights)[None] - 0.5 * sq / self.variance - 0.5 * self.d * (LOG_2PI + np.log(self.variance))
        top = comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True)))[:, 0]

    def sample_target(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.centers[comp] + np.sqrt(self.variance) * rng.standard_normal((n, self.d))

    def manifest(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "variance": self.variance,
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
        }


def banana_log_density(xs) -> np.ndarray:
    """``log N((x1, x2 + x1^2 + 1) | 0, [[1, .9], [.9, 1]])``; normalised (unit Jacobian)."""
    xs = np.atleast_2d(xs)
    y = np.stack([xs[:, 0], xs[:, 1] + xs[:, 0] ** 2 + 1.0], axis=1)
    prec = np.linalg.inv(BANANA_COV)
    quad = np.einsum("ni,ij,nj->n", y, prec, y)
    return -0.5 * quad - LOG_2PI - 0.5 * np.log(np.linalg.det(BANANA_COV))


def banana_exact_sample(rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Exact draws: y ~ N(0, cov) mapped to (y1, y2 - y1^2 - 1)."""
    y = rng.multivariate_normal(np.zeros(2), BANANA_COV, size=n)
    return np.stack([y[:, 0], y[:, 1] - y[:, 0] ** 2 - 1.0], axis=1)


class BananaEnv(ContinuousEnv):
    kind = "banana"
    d = 2

    def log_density(self, xs):
        return banana_log_density(xs)

    def sample_target(self, n, rng):
        return banana_exact_sample(rng, n)

    def manifest(self):
        return {"kind": self.kind, "d": 2, "covariance": BANANA_COV.tolist()}
