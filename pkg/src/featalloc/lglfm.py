"""Collapsed linear-Gaussian latent feature likelihood.

With ``X = Z A + E``, ``A`` having iid N(0, sigma_a^2) entries and ``E`` iid
N(0, sigma_x^2) entries, integrating out ``A`` leaves each column of ``X``
distributed as N(0, sigma_a^2 Z Z' + sigma_x^2 I).  The log-density below is
the proper density (the 2 pi constant is included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .allocation import FeatureAllocation
from .errors import NumericalError, ValidationError

__all__ = ["LglfmData", "LikelihoodCache", "NoiseScales", "log_likelihood", "log_likelihood_cached"]


@dataclass(frozen=True)
class LglfmData:
    """Observed ``N x D`` matrix, plus whatever standardization produced it."""

    x: np.ndarray
    means: np.ndarray | None = None
    scales: np.ndarray | None = None
    trace_xx: float = field(init=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[1] < 1 or x.shape[0] < 1:
            raise ValidationError(f"data must be a non-empty N x D matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("data contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "trace_xx", float(np.sum(x * x)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class NoiseScales:
    sigma_x: float
    sigma_a: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_a > 0):
            raise ValidationError(f"noise scales must be > 0, got {self.sigma_x}, {self.sigma_a}")


def _check_dims(z: FeatureAllocation, data: LglfmData) -> None:
    if z.n_customers != data.n:
        raise ValidationError(f"allocation has {z.n_customers} rows but data has {data.n}")


def log_likelihood(z: FeatureAllocation, data: LglfmData, s: NoiseScales) -> float:
    _check_dims(z, data)
    n, dim = data.x.shape
    k = z.n_features
    zf = z.matrix.astype(float)
    m = zf.T @ zf + (s.sigma_x**2 / s.sigma_a**2) * np.eye(k)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Z'Z + (sigma_x/sigma_a)^2 I is not positive definite") from exc
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    w = solve_triangular(chol, zf.T @ data.x, lower=True) if k else np.zeros((0, dim))
    quad = float(np.sum(w * w))
    return (
        -0.5 * n * dim * math.log(2 * math.pi)
        - (n - k) * dim * math.log(s.sigma_x)
        - k * dim * math.log(s.sigma_a)
        - 0.5 * dim * logdet
        - (data.trace_xx - quad) / (2 * s.sigma_x**2)
    )


class LikelihoodCache:
    """Holds ``Z'Z`` and ``Z'X`` for the last allocation seen.

    Single-bit flips and single singleton-column additions/removals are
    applied incrementally; anything else triggers a rebuild.  The Cholesky
    factor is recomputed on every evaluation.  With ``debug=True`` every value
    is cross-checked against :func:`log_likelihood`.
    """

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.z: np.ndarray | None = None
        self.data: LglfmData | None = None
        self.gram: np.ndarray | None = None
        self.cross: np.ndarray | None = None
        self.rebuilds = 0
        self.incremental = 0

    def _rebuild(self, z: np.ndarray, data: LglfmData) -> None:
        zf = z.astype(float)
        self.gram = zf.T @ zf
        self.cross = zf.T @ data.x
        self.z = z.copy()
        self.data = data
        self.rebuilds += 1

    def _try_incremental(self, z: np.ndarray) -> bool:
        old = self.z
        x = self.data.x
        if z.shape == old.shape:
            diff = np.argwhere(z != old)
            if len(diff) != 1:
                return len(diff) == 0
            i, m = diff[0]
            delta = float(z[i, m]) - float(old[i, m])
            row = z[i].astype(float)
            row[m] = 0.0
            self.gram[m, :] += delta * row
            self.gram[:, m] += delta * row
            self.gram[m, m] += delta
            self.cross[m] += delta * x[i]
            self.z = z.copy()
            return True
        if z.shape[1] == old.shape[1] + 1 and np.array_equal(z[:, :-1], old):
            col = z[:, -1]
            if col.sum() != 1:
                return False
            i = int(np.argmax(col))
            k = old.shape[1]
            gram = np.zeros((k + 1, k + 1))
            gram[:k, :k] = self.gram
            gram[k, :k] = gram[:k, k] = z[i, :k]
            gram[k, k] = 1.0
            self.gram = gram
            self.cross = np.vstack([self.cross, x[i]])
            self.z = z.copy()
            return True
        if z.shape[1] == old.shape[1] - 1:
            k = old.shape[1]
            for m in range(k):
                if old[:, m].sum() == 1 and np.array_equal(np.delete(old, m, axis=1), z):
                    keep = [c for c in range(k) if c != m]
                    self.gram = self.gram[np.ix_(keep, keep)]
                    self.cross = self.cross[keep]
                    self.z = z.copy()
                    return True
        return False

    def evaluate(self, z: FeatureAllocation, data: LglfmData, s: NoiseScales) -> float:
        _check_dims(z, data)
        zm = z.matrix
        if self.z is None or self.data is not data or not self._try_incremental(zm):
            self._rebuild(zm, data)
        else:
            self.incremental += 1
        k = zm.shape[1]
        value = _kernels.loglik_from_gram(
            np.ascontiguousarray(self.gram), np.ascontiguousarray(self.cross),
            k, data.trace_xx, data.n, data.dim, float(s.sigma_x), float(s.sigma_a),
        )
        if not math.isfinite(value):
            raise NumericalError("cached likelihood evaluation failed (matrix not positive definite)")
        if self.debug:
            ref = log_likelihood(z, data, s)
            if abs(value - ref) > 1e-8 * max(1.0, abs(ref)):
                raise NumericalError(f"stale likelihood cache: {value!r} != {ref!r}")
        return value


def log_likelihood_cached(
    z: FeatureAllocation,
    data: LglfmData,
    s: NoiseScales,
    cache: LikelihoodCache | None = None,
) -> tuple[float, LikelihoodCache]:
    if cache is None:
        cache = LikelihoodCache()
    return cache.evaluate(z, data, s), cache
