"""Distance matrices, decay functions and the similarity matrices they induce."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "DECAY_KINDS",
    "AxiomReport",
    "DecayFunction",
    "DistanceMatrix",
    "SimilarityMatrix",
    "evaluate",
    "similarity_matrix",
    "validate_axioms",
]

DECAY_KINDS = ("constant", "exponential", "reciprocal", "window")

ZERO_DISTANCE_JITTER = 1e-5


@dataclass(frozen=True)
class DecayFunction:
    """Map ``f(tau, d)`` from distance to similarity.

    ``const`` is used by the constant kind, ``shift`` by the reciprocal kind.
    """

    kind: str = "exponential"
    const: float = 1.0
    shift: float = 1.0

    def __post_init__(self):
        if self.kind not in DECAY_KINDS:
            raise ValidationError(f"unknown decay kind {self.kind!r}; choose from {DECAY_KINDS}")
        if self.kind == "constant" and not self.const > 0:
            raise ValidationError("constant decay needs c > 0")
        if self.kind == "reciprocal" and not self.shift > 0:
            raise ValidationError("reciprocal decay needs shift > 0")

    @property
    def code(self) -> int:
        """Integer code used by the compiled kernels."""
        return DECAY_KINDS.index(self.kind)

    @property
    def param(self) -> float:
        return self.const if self.kind == "constant" else self.shift

    def __call__(self, tau: float, d: float) -> float:
        return evaluate(self, tau, d)


def evaluate(f: DecayFunction, tau: float, d: float) -> float:
    if tau < 0 or d < 0:
        raise ValidationError(f"decay needs tau >= 0 and d >= 0, got tau={tau}, d={d}")
    if f.kind == "constant":
        return float(f.const)
    if f.kind == "exponential":
        return math.exp(-tau * d)
    if f.kind == "reciprocal":
        return (d + f.shift) ** (-tau)
    if tau == 0:
        return 1.0
    return 1.0 if d <= 1.0 / tau else 0.0


def _apply(f: DecayFunction, tau: float, d: np.ndarray) -> np.ndarray:
    if f.kind == "constant":
        return np.full_like(d, f.const, dtype=float)
    if f.kind == "exponential":
        return np.exp(-tau * d)
    if f.kind == "reciprocal":
        return (d + f.shift) ** (-tau)
    if tau == 0:
        return np.ones_like(d, dtype=float)
    return (d <= 1.0 / tau).astype(float)


class DistanceMatrix:
    """Symmetric, zero-diagonal, nonnegative ``N x N`` distances.

    Off-diagonal zeros are allowed but warned about.  With ``jitter=True`` a
    small constant is added to every off-diagonal entry.
    """

    def __init__(self, d, *, jitter: bool = False, atol: float = 1e-12):
        d = np.array(d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
            raise ValidationError(f"distance matrix must be square, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.any(d < 0):
            i, j = np.argwhere(d < 0)[0]
            raise ValidationError(f"negative distance at ({i}, {j})")
        if not np.allclose(d, d.T, rtol=0, atol=atol):
            i, j = np.argwhere(~np.isclose(d, d.T, rtol=0, atol=atol))[0]
            raise ValidationError(f"distance matrix is not symmetric at ({i}, {j})")
        if np.any(np.diag(d) != 0):
            raise ValidationError("distance matrix must have a zero diagonal")
        d = 0.5 * (d + d.T)
        off = ~np.eye(d.shape[0], dtype=bool)
        if np.any(d[off] == 0):
            if jitter:
                d[off] += ZERO_DISTANCE_JITTER
            else:
                warnings.warn(
                    "distance matrix has zero off-diagonal entries; consider jitter=True",
                    stacklevel=2,
                )
        d.setflags(write=False)
        self.d = d

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @classmethod
    def from_points(cls, points, **kwargs) -> "DistanceMatrix":
        """Euclidean distances between the rows of ``points``."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        diff = p[:, None, :] - p[None, :, :]
        return cls(np.sqrt((diff**2).sum(-1)), **kwargs)

    @classmethod
    def temporal(cls, n: int, scale: float = 1.0) -> "DistanceMatrix":
        """``d(i, j) = |i - j| / scale``."""
        idx = np.arange(n, dtype=float)
        return cls(np.abs(idx[:, None] - idx[None, :]) / scale)


@dataclass(frozen=True)
class SimilarityMatrix:
    lam: np.ndarray
    decay: DecayFunction = field(default_factory=DecayFunction)
    tau: float = 0.0

    @property
    def n(self) -> int:
        return self.lam.shape[0]


def similarity_matrix(D: DistanceMatrix, f: DecayFunction, tau: float) -> SimilarityMatrix:
    if tau < 0:
        raise ValidationError(f"temperature must be >= 0, got {tau}")
    lam = _apply(f, float(tau), D.d)
    lam = 0.5 * (lam + lam.T)
    lam.setflags(write=False)
    return SimilarityMatrix(lam, f, float(tau))


@dataclass
class AxiomReport:
    """Per-axiom verdicts; a failing axiom records the first violating tuple."""

    monotone: bool = True
    tempered: bool = True
    constant_at_zero: bool = True
    violations: dict[str, tuple] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.monotone and self.tempered and self.constant_at_zero


def validate_axioms(
    f: Callable[[float, float], float],
    tau_grid: Sequence[float],
    d_grid: Sequence[float],
    rtol: float = 1e-12,
) -> AxiomReport:
    """Check the three decay-function requirements on a grid.

    1. ``f(tau, .)`` is nonincreasing in ``d``;
    2. ``f(t1, d1) f(t2, d2) <= f(t2, d1) f(t1, d2)`` for ``d1 <= d2``, ``t1 <= t2``;
    3. ``f(0, .)`` is a positive constant.
    """
    taus = sorted(float(t) for t in tau_grid)
    ds = sorted(float(d) for d in d_grid)
    if not taus or not ds:
        raise ValidationError("validate_axioms needs nonempty grids")
    vals = {(t, d): f(t, d) for t in taus for d in ds}
    report = AxiomReport()

    for t in taus:
        for d1, d2 in zip(ds, ds[1:]):
            if vals[t, d2] > vals[t, d1] * (1 + rtol):
                report.monotone = False
                report.violations.setdefault("monotone", (t, d1, d2))
                break
        if not report.monotone:
            break

    done = False
    for a, t1 in enumerate(taus):
        for t2 in taus[a:]:
            for b, d1 in enumerate(ds):
                for d2 in ds[b:]:
                    lhs = vals[t1, d1] * vals[t2, d2]
                    rhs = vals[t2, d1] * vals[t1, d2]
                    if lhs > rhs * (1 + rtol) + 1e-300:
                        report.tempered = False
                        report.violations["tempered"] = (t1, t2, d1, d2)
                        done = True
                        break
                if done:
                    break
            if done:
                break
        if done:
            break

    at_zero = [f(0.0, d) for d in ds]
    c = at_zero[0]
    if not (c > 0 and math.isfinite(c)) or any(abs(v - c) > rtol * abs(c) for v in at_zero):
        report.constant_at_zero = False
        report.violations["constant_at_zero"] = tuple(at_zero)
    return report
