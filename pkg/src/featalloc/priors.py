"""IBP and AIBD priors over feature allocations.

Log-pmfs here follow the constructive product form directly (new-dish
Poisson terms, then one Bernoulli factor per customer and existing dish).
The compiled sampler uses an algebraically regrouped version; both are
checked against each other and against exhaustive enumeration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .allocation import AllocationKey, FeatureAllocation, allocation_stats
from .errors import ValidationError
from .similarity import DecayFunction, DistanceMatrix, SimilarityMatrix, similarity_matrix

__all__ = [
    "AibdParams",
    "FeatureCountLaw",
    "IbpParams",
    "aibd_logpmf",
    "ddibp_feature_count_pmf",
    "enumerate_allocations",
    "feature_count_pmf",
    "harmonic",
    "ibp_logpmf",
    "sample_aibd",
    "sample_ibp",
]

ENUMERATION_MAX_N = 4
ENUMERATION_MAX_K = 4
COMPENSATED_SUM_ABOVE_N = 64


def harmonic(n: int) -> float:
    if n < 1:
        raise ValidationError(f"harmonic number needs n >= 1, got {n}")
    return math.fsum(1.0 / i for i in range(1, n + 1))


@dataclass(frozen=True)
class IbpParams:
    mass: float
    n_customers: int

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError(f"mass must be > 0, got {self.mass}")
        if self.n_customers < 1:
            raise ValidationError(f"need at least one customer, got {self.n_customers}")


@dataclass(frozen=True)
class AibdParams:
    """Mass, arrival order and similarity matrix of an AIBD.

    ``permutation[p]`` is the (0-based) customer arriving at position ``p``;
    ``None`` means the natural order.
    """

    mass: float
    similarity: SimilarityMatrix
    permutation: tuple[int, ...] | None = None
    _rho: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError(f"mass must be > 0, got {self.mass}")
        n = self.similarity.n
        perm = tuple(range(n)) if self.permutation is None else tuple(int(v) for v in self.permutation)
        if sorted(perm) != list(range(n)):
            raise ValidationError(f"permutation must be a bijection on 0..{n - 1}")
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "_rho", np.array(perm, dtype=np.int64))

    @classmethod
    def build(
        cls,
        mass: float,
        distances: DistanceMatrix,
        decay: DecayFunction,
        tau: float,
        permutation: Sequence[int] | None = None,
    ) -> "AibdParams":
        return cls(mass, similarity_matrix(distances, decay, tau), permutation)

    @property
    def n_customers(self) -> int:
        return self.similarity.n

    @property
    def rho(self) -> np.ndarray:
        return self._rho

    def denominators(self) -> np.ndarray:
        """Total similarity of each arriving customer to all earlier ones."""
        lam = self.similarity.lam
        rho = self._rho
        n = rho.size
        den = np.zeros(n)
        for p in range(1, n):
            w = lam[rho[:p], rho[p]]
            den[p] = math.fsum(w) if n > COMPENSATED_SUM_ABOVE_N else w.sum()
        return den

    def check_denominators(self) -> np.ndarray:
        den = self.denominators()
        bad = np.flatnonzero(den[1:] <= 0)
        if bad.size:
            p = int(bad[0]) + 1
            raise ValidationError(
                f"customer {int(self._rho[p]) + 1} (arrival position {p + 1}) has zero total similarity "
                "to all earlier customers; the attraction probability is undefined"
            )
        return den


def _poisson_and_combinatorial(z: FeatureAllocation, mass: float, new_dishes, multiplicities) -> float:
    n = z.n_customers
    positions = np.arange(1, n + 1, dtype=float)
    # prod x_i! cancels against the Poisson denominators.
    log_kh = sum(math.lgamma(c + 1.0) for c in multiplicities.values())
    return (
        -log_kh
        + z.n_features * math.log(mass)
        - mass * harmonic(n)
        - float(np.dot(new_dishes, np.log(positions)))
    )


def _bernoulli_sum(z_ordered: np.ndarray, prob: np.ndarray, active: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        terms = np.where(z_ordered == 1, np.log(prob), np.log1p(-prob))
    return float(terms[active].sum())


def ibp_logpmf(z: FeatureAllocation, p: IbpParams) -> float:
    if z.n_customers != p.n_customers:
        raise ValidationError(f"allocation has {z.n_customers} rows, params expect {p.n_customers}")
    st = allocation_stats(z)
    n, k = z.shape
    logp = _poisson_and_combinatorial(z, p.mass, st.new_dishes, st.column_multiplicities)
    if k == 0:
        return logp
    i = np.arange(1, n + 1, dtype=float)[:, None]
    prob = st.prior_counts / i
    # Only dishes already on the table when customer i arrives (k <= y_i).
    active = st.first_position[None, :] < np.arange(n)[:, None]
    return logp + _bernoulli_sum(z.matrix.astype(np.int64), prob, active)


def aibd_logpmf(z: FeatureAllocation, p: AibdParams) -> float:
    if z.n_customers != p.n_customers:
        raise ValidationError(f"allocation has {z.n_customers} rows, params expect {p.n_customers}")
    den = p.check_denominators()
    rho = p.rho
    st = allocation_stats(z, rho)
    n, k = z.shape
    logp = _poisson_and_combinatorial(z, p.mass, st.new_dishes, st.column_multiplicities)
    if k == 0:
        return logp
    lam = p.similarity.lam
    zo = z.matrix[rho].astype(np.int64)
    # attract[p, q] = similarity of the customer at position p to the one at q < p.
    attract = np.tril(lam[np.ix_(rho, rho)], k=-1)
    if n > COMPENSATED_SUM_ABOVE_N:
        num = np.array([[math.fsum(attract[a] * zo[:, b]) for b in range(k)] for a in range(n)])
    else:
        num = attract @ zo
    den_safe = np.where(den > 0, den, 1.0)
    h = num / den_safe[:, None]
    pos = np.arange(n, dtype=float)
    prob = h * (pos / (pos + 1.0))[:, None]
    active = st.first_position[None, :] < np.arange(n)[:, None]
    return logp + _bernoulli_sum(zo, prob, active)


def sample_ibp(p: IbpParams, rng: np.random.Generator) -> FeatureAllocation:
    """Constructive IBP draw in the natural customer order."""
    n = p.n_customers
    columns: list[list[int]] = []
    counts: list[int] = []
    for i in range(1, n + 1):
        if columns:
            take = rng.random(len(columns)) < np.asarray(counts) / i
            for k in np.flatnonzero(take):
                columns[k][i - 1] = 1
                counts[k] += 1
        for _ in range(rng.poisson(p.mass / i)):
            col = [0] * n
            col[i - 1] = 1
            columns.append(col)
            counts.append(1)
    return FeatureAllocation.from_columns(columns, n)


def sample_aibd(p: AibdParams, rng: np.random.Generator) -> FeatureAllocation:
    """Constructive AIBD draw following the arrival order ``p.permutation``."""
    p.check_denominators()
    lam = np.ascontiguousarray(p.similarity.lam, dtype=float)
    Z, K = _kernels.aibd_draw(p.rho, lam, float(p.mass), rng)
    return FeatureAllocation(Z[:, :K])


@dataclass(frozen=True)
class FeatureCountLaw:
    """Poisson law of the total number of features."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValidationError(f"Poisson rate must be > 0, got {self.rate}")

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        return math.exp(k * math.log(self.rate) - self.rate - math.lgamma(k + 1.0))

    @property
    def mean(self) -> float:
        return self.rate


def feature_count_pmf(k: int, alpha: float, n: int) -> float:
    return FeatureCountLaw(alpha * harmonic(n)).pmf(k)


def ddibp_feature_count_pmf(k: int, alpha: float, proximity) -> float:
    """Feature-count pmf of the distance-dependent IBP.

    Customer ``i`` owns Poisson(alpha / h_i) dishes with ``h_i`` the i-th row
    sum of the proximity matrix.
    """
    prox = np.asarray(proximity, dtype=float)
    if prox.ndim != 2 or prox.shape[0] != prox.shape[1]:
        raise ValidationError(f"proximity matrix must be square, got shape {prox.shape}")
    h = prox.sum(axis=1)
    if np.any(h <= 0):
        raise ValidationError(f"proximity row {int(np.argmax(h <= 0))} sums to zero")
    return FeatureCountLaw(alpha * math.fsum(1.0 / h)).pmf(k)


def enumerate_allocations(n: int, max_k: int) -> Iterator[AllocationKey]:
    """Every left-ordered-form allocation with ``n`` rows and at most ``max_k`` columns."""
    if not 1 <= n <= ENUMERATION_MAX_N or not 0 <= max_k <= ENUMERATION_MAX_K:
        raise ValidationError(
            f"enumeration limited to 1 <= n <= {ENUMERATION_MAX_N} and "
            f"0 <= max_k <= {ENUMERATION_MAX_K}; got n={n}, max_k={max_k}"
        )
    patterns = range((1 << n) - 1, 0, -1)
    for k in range(max_k + 1):
        for cols in itertools.combinations_with_replacement(patterns, k):
            yield AllocationKey(n, cols)
