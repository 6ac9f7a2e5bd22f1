"""Monte Carlo summaries of feature allocation draws and posterior chains.

The reducers are streaming and mergeable, so per-chain summaries can be
combined after the fact.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .allocation import FeatureAllocation
from .errors import ValidationError
from .lglfm import LglfmData, NoiseScales, log_likelihood
from .mcmc import ChainSample
from .priors import FeatureCountLaw, harmonic

__all__ = [
    "AccuracyReport",
    "CorrelationAccumulator",
    "SharingAccumulator",
    "SharingSummary",
    "accuracy_report",
    "dic",
    "feature_count_histogram",
    "permutation_diagnostics",
    "sharing_summary",
    "squared_correlation",
]


def _as_allocation(draw) -> FeatureAllocation:
    if isinstance(draw, FeatureAllocation):
        return draw
    if isinstance(draw, ChainSample):
        return draw.allocation()
    return FeatureAllocation(draw)


@dataclass(frozen=True)
class SharingSummary:
    """Expected shared features per customer pair.

    The diagonal of ``pair_means`` holds the expected number of features per
    customer.  ``customers_per_feature`` is ``None`` when no draw had K > 0.
    """

    pair_means: np.ndarray
    pair_se: np.ndarray
    overall_mean: float
    overall_se: float
    customers_per_feature: float | None
    n_draws: int


class SharingAccumulator:
    def __init__(self, n: int):
        self.n = n
        self.count = 0
        self.sum = np.zeros((n, n))
        self.sumsq = np.zeros((n, n))
        self.overall_sum = 0.0
        self.overall_sumsq = 0.0
        self.cpf_sum = 0.0
        self.cpf_count = 0
        self._iu = np.triu_indices(n, 1)

    def update(self, z: FeatureAllocation) -> None:
        if z.n_customers != self.n:
            raise ValidationError(f"draw has {z.n_customers} customers, expected {self.n}")
        zf = z.matrix.astype(float)
        s = zf @ zf.T
        self.count += 1
        self.sum += s
        self.sumsq += s * s
        if self.n > 1:
            o = float(s[self._iu].mean())
            self.overall_sum += o
            self.overall_sumsq += o * o
        if z.n_features:
            self.cpf_sum += zf.sum() / z.n_features
            self.cpf_count += 1

    def merge(self, other: "SharingAccumulator") -> "SharingAccumulator":
        if other.n != self.n:
            raise ValidationError("cannot merge summaries over different N")
        out = SharingAccumulator(self.n)
        for name in ("count", "sum", "sumsq", "overall_sum", "overall_sumsq", "cpf_sum", "cpf_count"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    def summary(self) -> SharingSummary:
        if self.count == 0:
            raise ValidationError("sharing summary needs at least one draw")
        m = self.count
        mean = self.sum / m
        var = np.maximum(self.sumsq / m - mean**2, 0.0)
        se = np.sqrt(var / max(m - 1, 1))
        om = self.overall_sum / m if self.n > 1 else math.nan
        ovar = max(self.overall_sumsq / m - om**2, 0.0) if self.n > 1 else math.nan
        return SharingSummary(
            pair_means=mean,
            pair_se=se,
            overall_mean=om,
            overall_se=math.sqrt(ovar / max(m - 1, 1)) if self.n > 1 else math.nan,
            customers_per_feature=self.cpf_sum / self.cpf_count if self.cpf_count else None,
            n_draws=m,
        )


def sharing_summary(draws: Iterable) -> SharingSummary:
    acc = None
    for d in draws:
        z = _as_allocation(d)
        if acc is None:
            acc = SharingAccumulator(z.n_customers)
        acc.update(z)
    if acc is None:
        raise ValidationError("sharing summary needs at least one draw")
    return acc.summary()


class CorrelationAccumulator:
    """Pools the columns of all draws and tracks row co-moments."""

    def __init__(self, n: int):
        self.n = n
        self.columns = 0
        self.draws = 0
        self.s1 = np.zeros(n)
        self.s2 = np.zeros((n, n))

    def update(self, z: FeatureAllocation) -> None:
        if z.n_customers != self.n:
            raise ValidationError(f"draw has {z.n_customers} customers, expected {self.n}")
        zf = z.matrix.astype(float)
        self.draws += 1
        self.columns += zf.shape[1]
        self.s1 += zf.sum(axis=1)
        self.s2 += zf @ zf.T

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        out = CorrelationAccumulator(self.n)
        out.columns = self.columns + other.columns
        out.draws = self.draws + other.draws
        out.s1 = self.s1 + other.s1
        out.s2 = self.s2 + other.s2
        return out

    def result(self) -> np.ndarray:
        if self.draws < 2:
            raise ValidationError("squared correlation needs at least two draws")
        c = self.columns
        if c == 0:
            return np.zeros((self.n, self.n))
        mean = self.s1 / c
        cov = self.s2 / c - np.outer(mean, mean)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        denom = np.outer(sd, sd)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(denom > 1e-15, cov / denom, 0.0)
        r2 = np.clip(r * r, 0.0, 1.0)
        np.fill_diagonal(r2, np.where(sd > 1e-15, 1.0, 0.0))
        return r2


def squared_correlation(draws: Iterable) -> np.ndarray:
    """Squared correlation between customers' binary rows over all pooled draw columns."""
    acc = None
    for d in draws:
        z = _as_allocation(d)
        if acc is None:
            acc = CorrelationAccumulator(z.n_customers)
        acc.update(z)
    if acc is None:
        raise ValidationError("squared correlation needs at least two draws")
    return acc.result()


@dataclass(frozen=True)
class AccuracyReport:
    max_feature_prob_error: float
    mean_active_feature_error: float
    n_draws: int


def accuracy_from_counts(feature_counts: Sequence[int], active_counts: Sequence[float],
                         alpha: float, n: int) -> AccuracyReport:
    """Accuracy metrics from per-draw K and per-draw total number of ones."""
    ks = np.asarray(feature_counts, dtype=np.int64)
    tr = np.asarray(active_counts, dtype=float)
    if ks.size == 0:
        raise ValidationError("accuracy report needs at least one draw")
    law = FeatureCountLaw(alpha * harmonic(n))
    freq = np.bincount(ks) / ks.size
    kmax = max(int(ks.max()), int(law.rate + 20 * math.sqrt(law.rate) + 20))
    err = max(abs(law.pmf(k) - (freq[k] if k < freq.size else 0.0)) for k in range(kmax + 1))
    return AccuracyReport(err, abs(alpha * n - float(tr.mean())), int(ks.size))


def accuracy_report(draws: Iterable, alpha: float, n: int) -> AccuracyReport:
    ks, tr = [], []
    for d in draws:
        z = _as_allocation(d)
        if z.n_customers != n:
            raise ValidationError(f"draw has {z.n_customers} customers, expected {n}")
        ks.append(z.n_features)
        tr.append(int(z.matrix.sum()))
    return accuracy_from_counts(ks, tr, alpha, n)


def dic(chain: Iterable, data: LglfmData | None = None) -> float:
    """Deviance information criterion with the variance-based penalty.

    ``chain`` holds :class:`ChainSample` records or bare log-likelihoods.  If
    ``data`` is given, log-likelihoods are recomputed from each sample.
    """
    ll = []
    for s in chain:
        if isinstance(s, ChainSample):
            if data is not None:
                ll.append(log_likelihood(s.allocation(), data, NoiseScales(s.sigma_x, s.sigma_a)))
            else:
                ll.append(s.log_lik)
        else:
            ll.append(float(s))
    if len(ll) < 2:
        raise ValidationError("DIC needs at least two samples")
    dev = -2.0 * np.sort(np.asarray(ll))
    return float(dev.mean() + 0.5 * dev.var(ddof=1))


def feature_count_histogram(draws: Iterable) -> dict[int, float]:
    counts = Counter(_as_allocation(d).n_features for d in draws)
    m = sum(counts.values())
    if m == 0:
        raise ValidationError("histogram needs at least one draw")
    return {k: counts[k] / m for k in sorted(counts)}


def permutation_diagnostics(samples: Sequence[ChainSample]) -> dict[str, np.ndarray]:
    """Movement and convergence summaries of the arrival order.

    ``position_sd[j]`` is the standard deviation of customer ``j``'s arrival
    position across samples.  ``first_half_mean`` and ``odd_mean`` are running
    means of the average position of the first half of the customers and of
    the odd-numbered customers.
    """
    if not samples:
        raise ValidationError("no samples")
    rho = np.array([s.rho for s in samples], dtype=np.int64) - 1
    m, n = rho.shape
    pos = np.empty_like(rho)
    rows = np.arange(m)[:, None]
    pos[rows, rho] = np.arange(1, n + 1)[None, :]
    first_half = pos[:, : max(n // 2, 1)].mean(axis=1)
    odd = pos[:, 0::2].mean(axis=1)
    steps = np.arange(1, m + 1)
    return {
        "position_sd": pos.std(axis=0),
        "first_half_mean": np.cumsum(first_half) / steps,
        "odd_mean": np.cumsum(odd) / steps,
    }
