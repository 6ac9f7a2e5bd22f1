"""Metropolis-Hastings-within-Gibbs posterior sampler for IBP/AIBD latent feature models.

One scan = a row-by-row sweep of ``Z`` (flip moves on shared features, then a
truncated Gibbs draw of the row's singleton count), followed by
``updates_per_scan`` rounds of updates to alpha, rho, tau and the noise scales.
Passing ``data=None`` samples with a flat likelihood, i.e. from the prior.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .allocation import FeatureAllocation
from .errors import ValidationError
from .lglfm import LglfmData
from .similarity import DecayFunction, DistanceMatrix

__all__ = [
    "ChainSample",
    "Fixed",
    "Gamma",
    "McmcConfig",
    "McmcState",
    "PriorSpec",
    "Sampler",
    "Uniform",
    "flip_hastings_ratio",
    "run_chain",
]

log = logging.getLogger(__name__)

MAX_NEW_SINGLETONS = 10_000


def _num(x: float) -> str:
    # Shortest repr that round-trips exactly.
    return repr(float(x))


@dataclass(frozen=True)
class Gamma:
    """Gamma(shape, rate) with mean ``shape / rate``."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValidationError(f"gamma prior needs shape, rate > 0, got {self.shape}, {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x

    def spec(self) -> str:
        return f"gamma:{_num(self.shape)},{_num(self.rate)}"


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not (0 <= self.low < self.high):
            raise ValidationError(f"uniform prior needs 0 <= low < high, got {self.low}, {self.high}")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def logpdf(self, x: float) -> float:
        if self.low < x < self.high:
            return -math.log(self.high - self.low)
        return -math.inf

    def spec(self) -> str:
        return f"uniform:{_num(self.low)},{_num(self.high)}"


@dataclass(frozen=True)
class Fixed:
    value: float | tuple

    def spec(self) -> str:
        if isinstance(self.value, tuple):
            return "fixed:" + ",".join(_num(v) for v in self.value)
        return f"fixed:{_num(self.value)}"


@dataclass(frozen=True)
class PriorSpec:
    """Which feature-allocation prior to use.

    The IBP is run as the AIBD with constant similarity, fixed order and
    fixed temperature.
    """

    kind: str = "ibp"
    distances: DistanceMatrix | None = None
    decay: DecayFunction = field(default_factory=lambda: DecayFunction("exponential"))
    n_customers: int | None = None

    def __post_init__(self):
        if self.kind not in ("ibp", "aibd"):
            raise ValidationError(f"prior must be 'ibp' or 'aibd', got {self.kind!r}")
        if self.kind == "aibd" and self.distances is None:
            raise ValidationError("the AIBD prior needs a distance matrix")
        if self.distances is not None and self.n_customers is not None and self.distances.n != self.n_customers:
            raise ValidationError("distance matrix size does not match n_customers")


@dataclass
class McmcConfig:
    """Run length, tuning and parameter priors.

    ``n_samples`` counts scans including burn-in; every ``thin``-th scan after
    burn-in is retained.  ``k_rho=None`` tunes the shuffle size towards 25%
    acceptance during burn-in.
    """

    n_samples: int = 1000
    burn_in: int = 0
    thin: int = 1
    updates_per_scan: int = 10
    truncation_divisor: float = 1000.0
    k_rho: int | None = None
    proposal_sd_tau: float = 0.5
    proposal_sd_sigma: float = 0.02
    alpha: Gamma | Fixed = field(default_factory=lambda: Gamma(1.0, 1.0))
    tau: Gamma | Fixed = field(default_factory=lambda: Fixed(1.0))
    rho: str | Fixed = "uniform"
    sigmas: Uniform | Gamma | Fixed = field(default_factory=Uniform)
    seed: int | None = None

    def validate(self, n: int) -> None:
        if self.n_samples < 1 or self.thin < 1 or self.updates_per_scan < 0:
            raise ValidationError("n_samples and thin must be >= 1, updates_per_scan >= 0")
        if not 0 <= self.burn_in < self.n_samples:
            raise ValidationError(f"burn_in ({self.burn_in}) must lie in [0, n_samples={self.n_samples})")
        if not self.truncation_divisor >= 1:
            raise ValidationError("truncation_divisor must be >= 1")
        if self.k_rho is not None and not 2 <= self.k_rho <= max(n, 2):
            raise ValidationError(f"k_rho must lie in 2..{n}, got {self.k_rho}")
        if not (self.proposal_sd_tau > 0 and self.proposal_sd_sigma > 0):
            raise ValidationError("proposal standard deviations must be > 0")
        if isinstance(self.rho, str) and self.rho != "uniform":
            raise ValidationError(f"rho prior must be 'uniform' or fixed, got {self.rho!r}")
        if isinstance(self.rho, Fixed) and sorted(self.rho.value) != list(range(n)):
            raise ValidationError(f"fixed rho must be a permutation of 0..{n - 1}")
        if isinstance(self.alpha, Fixed) and not self.alpha.value > 0:
            raise ValidationError("fixed alpha must be > 0")
        if isinstance(self.tau, Fixed) and not self.tau.value >= 0:
            raise ValidationError("fixed tau must be >= 0")
        if isinstance(self.sigmas, Fixed):
            v = self.sigmas.value
            if not (isinstance(v, tuple) and len(v) == 2 and v[0] > 0 and v[1] > 0):
                raise ValidationError("fixed sigmas need two positive values (sigma_x, sigma_a)")


@dataclass
class McmcState:
    """Mutable chain state; ``zbuf[:, :k]`` holds the live columns."""

    zbuf: np.ndarray
    k: int
    alpha: float
    tau: float
    rho: np.ndarray
    sigma_x: float
    sigma_a: float
    log_prior: float = math.nan
    log_lik: float = math.nan

    @property
    def z(self) -> FeatureAllocation:
        return FeatureAllocation(self.zbuf[:, : self.k].copy())

    @classmethod
    def initial(cls, n: int, alpha: float, tau: float, rho: Sequence[int], sigma_x: float, sigma_a: float,
                z: FeatureAllocation | None = None) -> "McmcState":
        k = 0 if z is None else z.n_features
        zbuf = np.zeros((n, max(8, 2 * k)), dtype=np.int8)
        if z is not None:
            zbuf[:, :k] = z.matrix
        return cls(zbuf, k, float(alpha), float(tau), np.asarray(rho, dtype=np.int64).copy(),
                   float(sigma_x), float(sigma_a))


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


@dataclass(frozen=True)
class ChainSample:
    """One retained draw.  ``rho`` is stored 1-based, as on the command line."""

    iter: int
    z: tuple[str, ...]
    alpha: float
    tau: float
    rho: tuple[int, ...]
    sigma_x: float
    sigma_a: float
    log_lik: float
    log_prior: float

    @property
    def n_customers(self) -> int:
        return len(self.rho)

    def allocation(self) -> FeatureAllocation:
        return FeatureAllocation.from_strings(self.z, self.n_customers)

    def to_json(self) -> str:
        return (
            "{"
            f'"iter": {self.iter}, '
            f'"z": {json.dumps(list(self.z))}, '
            f'"alpha": {_fmt(self.alpha)}, '
            f'"tau": {_fmt(self.tau)}, '
            f'"rho": {json.dumps(list(self.rho))}, '
            f'"sigma_x": {_fmt(self.sigma_x)}, '
            f'"sigma_a": {_fmt(self.sigma_a)}, '
            f'"log_lik": {_fmt(self.log_lik)}, '
            f'"log_prior": {_fmt(self.log_prior)}'
            "}"
        )

    @classmethod
    def from_json(cls, line: str) -> "ChainSample":
        d = json.loads(line)
        try:
            return cls(
                iter=int(d["iter"]), z=tuple(d["z"]), alpha=float(d["alpha"]), tau=float(d["tau"]),
                rho=tuple(int(v) for v in d["rho"]), sigma_x=float(d["sigma_x"]),
                sigma_a=float(d["sigma_a"]), log_lik=float(d["log_lik"]), log_prior=float(d["log_prior"]),
            )
        except KeyError as exc:
            raise ValidationError(f"chain record missing key {exc}") from None


@dataclass
class _Rate:
    accepted: int = 0
    proposed: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else math.nan


class Sampler:
    """A single chain.  All randomness flows through ``self.rng``."""

    def __init__(self, config: McmcConfig, data: LglfmData | None, prior: PriorSpec,
                 init: McmcState | None = None):
        n = prior.distances.n if prior.distances is not None else prior.n_customers
        if data is not None:
            if n is not None and n != data.n:
                raise ValidationError(f"prior is set up for {n} customers but data has {data.n} rows")
            n = data.n
        if n is None:
            raise ValidationError("number of customers unknown: give data, distances or n_customers")
        config.validate(n)
        self.n = n
        self.config = config
        self.prior = prior
        self.data = data
        self.use_lik = data is not None
        self.rng = np.random.default_rng(config.seed)
        if self.use_lik:
            self._x = data.x
            self._trxx = data.trace_xx
        else:
            self._x = np.zeros((n, 1))
            self._trxx = 0.0

        if prior.kind == "ibp":
            self._decay = DecayFunction("constant", const=1.0)
            self._dist = np.zeros((n, n))
            self.fit_tau = False
            self.fit_rho = False
        else:
            self._decay = prior.decay
            self._dist = np.ascontiguousarray(prior.distances.d, dtype=float)
            self.fit_tau = isinstance(config.tau, Gamma)
            self.fit_rho = config.rho == "uniform" and n >= 2
        self.fit_alpha = isinstance(config.alpha, Gamma)
        self.fit_sigmas = self.use_lik and not isinstance(config.sigmas, Fixed)
        self.k_rho = config.k_rho if config.k_rho is not None else min(n, 4)
        self._tune_k_rho = config.k_rho is None

        if init is None:
            init = self._default_init()
        elif init.rho.shape != (n,) or init.zbuf.shape[0] != n:
            raise ValidationError("initial state does not match the number of customers")
        init.zbuf = np.ascontiguousarray(init.zbuf, dtype=np.int8)
        self.state = init
        self._lam = self._similarity(self.state.tau)
        den = _kernels.denominators(self.state.rho, self._lam)
        if not _kernels.denominators_ok(den):
            raise ValidationError("initial arrival order leaves a customer with zero total similarity")
        self.stats = np.zeros(_kernels.N_STATS, dtype=np.int64)
        self.rates = {"rho": _Rate(), "tau": _Rate(), "sigmas": _Rate()}
        self._refresh()

    # -- setup -------------------------------------------------------------

    def _default_init(self) -> McmcState:
        c = self.config
        alpha = c.alpha.value if isinstance(c.alpha, Fixed) else c.alpha.mean
        if self.prior.kind == "ibp":
            tau = 0.0
        else:
            tau = c.tau.value if isinstance(c.tau, Fixed) else c.tau.mean
        rho = list(c.rho.value) if isinstance(c.rho, Fixed) else list(range(self.n))
        if isinstance(c.sigmas, Fixed):
            sx, sa = c.sigmas.value
        else:
            sx = sa = c.sigmas.mean
        return McmcState.initial(self.n, alpha, tau, rho, sx, sa)

    def _similarity(self, tau: float) -> np.ndarray:
        return _kernels.decay_matrix(self._decay.code, float(self._decay.param), float(tau), self._dist)

    def _log_prior(self, rho=None, lam=None, alpha=None) -> float:
        s = self.state
        rho = s.rho if rho is None else rho
        lam = self._lam if lam is None else lam
        den = _kernels.denominators(rho, lam)
        if not _kernels.denominators_ok(den):
            return -math.inf
        return _kernels.log_prior(s.zbuf, s.k, rho, lam, den, s.alpha if alpha is None else alpha)

    def _log_lik(self, sx=None, sa=None) -> float:
        if not self.use_lik:
            return 0.0
        s = self.state
        return _kernels.loglik(s.zbuf, s.k, self._x, self._trxx,
                               s.sigma_x if sx is None else sx, s.sigma_a if sa is None else sa)

    def _refresh(self) -> None:
        self.state.log_prior = self._log_prior()
        self.state.log_lik = self._log_lik()

    # -- feature allocation kernels -----------------------------------------

    def update_z_row(self, i: int) -> None:
        """Flip moves for row ``i`` over features held by other customers."""
        s = self.state
        den = _kernels.denominators(s.rho, self._lam)
        _kernels.update_row_flips(s.zbuf, s.k, i, s.rho, self._lam, den, s.alpha, self._x, self._trxx,
                                  s.sigma_x, s.sigma_a, self.use_lik, self.rng, self.stats)
        self._refresh()

    def update_z_singletons(self, i: int) -> None:
        s = self.state
        den = _kernels.denominators(s.rho, self._lam)
        s.zbuf, s.k = _kernels.update_row_singletons(
            s.zbuf, s.k, i, s.rho, self._lam, den, s.alpha, self._x, self._trxx, s.sigma_x, s.sigma_a,
            self.use_lik, float(self.config.truncation_divisor), self.rng, self.stats, MAX_NEW_SINGLETONS,
        )
        self._refresh()

    def update_z(self, n_scans: int = 1) -> None:
        s = self.state
        s.zbuf, s.k = _kernels.z_scans(
            s.zbuf, s.k, n_scans, s.rho, self._lam, s.alpha, self._x, self._trxx, s.sigma_x, s.sigma_a,
            self.use_lik, float(self.config.truncation_divisor), self.rng, self.stats, MAX_NEW_SINGLETONS,
        )

    # -- other parameters ----------------------------------------------------

    def update_alpha(self) -> None:
        """Conjugate draw from Gamma(a + K, b + H_N)."""
        if not self.fit_alpha:
            return
        prior = self.config.alpha
        s = self.state
        s.alpha = float(self.rng.gamma(prior.shape + s.k, 1.0 / (prior.rate + _kernels.harmonic(self.n))))
        s.log_prior = self._log_prior()

    def update_rho(self) -> None:
        """Shuffle ``k_rho`` randomly chosen positions of the arrival order."""
        if not self.fit_rho:
            return
        s = self.state
        k = min(self.k_rho, self.n)
        pos = self.rng.choice(self.n, size=k, replace=False)
        proposal = s.rho.copy()
        proposal[pos] = s.rho[self.rng.permutation(pos)]
        rate = self.rates["rho"]
        rate.proposed += 1
        cand = self._log_prior(rho=proposal)
        if math.log(self.rng.random()) < cand - s.log_prior:
            s.rho = proposal
            s.log_prior = cand
            rate.accepted += 1

    def update_tau(self) -> None:
        """Gaussian random walk on the temperature; nonpositive proposals are rejected."""
        if not self.fit_tau:
            return
        s = self.state
        prior = self.config.tau
        rate = self.rates["tau"]
        rate.proposed += 1
        cand_tau = s.tau + self.config.proposal_sd_tau * self.rng.standard_normal()
        if cand_tau <= 0:
            return
        lam = self._similarity(cand_tau)
        cand = self._log_prior(lam=lam)
        log_ratio = prior.logpdf(cand_tau) - prior.logpdf(s.tau) + cand - s.log_prior
        if math.log(self.rng.random()) < log_ratio:
            s.tau = cand_tau
            self._lam = lam
            s.log_prior = cand
            rate.accepted += 1

    def update_sigmas(self) -> None:
        """Joint Gaussian random walk on (sigma_x, sigma_a)."""
        if not self.fit_sigmas:
            return
        s = self.state
        prior = self.config.sigmas
        rate = self.rates["sigmas"]
        rate.proposed += 1
        step = self.config.proposal_sd_sigma * self.rng.standard_normal(2)
        sx, sa = s.sigma_x + step[0], s.sigma_a + step[1]
        lp_new = prior.logpdf(sx) + prior.logpdf(sa)
        if not math.isfinite(lp_new):
            return
        lik = self._log_lik(sx, sa)
        log_ratio = lp_new - prior.logpdf(s.sigma_x) - prior.logpdf(s.sigma_a) + lik - s.log_lik
        if math.log(self.rng.random()) < log_ratio:
            s.sigma_x, s.sigma_a, s.log_lik = sx, sa, lik
            rate.accepted += 1

    @property
    def updates_parameters(self) -> bool:
        return self.config.updates_per_scan > 0 and (
            self.fit_alpha or self.fit_rho or self.fit_tau or self.fit_sigmas
        )

    def scan(self, n_scans: int = 1) -> None:
        if not self.updates_parameters:
            self.update_z(n_scans)
            self._refresh()
            return
        for _ in range(n_scans):
            self.update_z()
            self._refresh()
            for _ in range(self.config.updates_per_scan):
                self.update_alpha()
                self.update_rho()
                self.update_tau()
                self.update_sigmas()

    def _retune_k_rho(self) -> None:
        r = self.rates["rho"]
        if r.proposed < 50:
            return
        if r.rate < 0.20 and self.k_rho > 2:
            self.k_rho -= 1
        elif r.rate > 0.30 and self.k_rho < self.n:
            self.k_rho += 1
        self.rates["rho"] = _Rate()

    # -- output ------------------------------------------------------------

    def sample(self, iteration: int) -> ChainSample:
        s = self.state
        return ChainSample(
            iter=iteration,
            z=tuple(s.z.to_strings()),
            alpha=s.alpha,
            tau=s.tau,
            rho=tuple(int(v) + 1 for v in s.rho),
            sigma_x=s.sigma_x,
            sigma_a=s.sigma_a,
            log_lik=s.log_lik,
            log_prior=s.log_prior,
        )

    def acceptance_rates(self) -> dict[str, float]:
        flips = self.stats[_kernels.FLIP_PROPOSED]
        out = {
            "z_flip": float(self.stats[_kernels.FLIP_ACCEPTED] / flips) if flips else math.nan,
            "mean_singleton_support": (
                float(self.stats[_kernels.SINGLETON_TRUNC_LEN] / self.stats[_kernels.SINGLETON_DRAWS])
                if self.stats[_kernels.SINGLETON_DRAWS] else math.nan
            ),
        }
        for name, r in self.rates.items():
            out[name] = r.rate
        out["k_rho"] = float(self.k_rho)
        return out

    def run(self) -> Iterator[ChainSample]:
        """Yield retained samples; iterations are 1-based scan counts."""
        c = self.config
        done = 0
        next_keep = c.burn_in + c.thin
        while done < c.n_samples:
            step = min(next_keep, c.n_samples) - done
            if self._tune_k_rho and self.fit_rho and done < c.burn_in:
                step = min(step, max(1, c.burn_in - done), 10)
            self.scan(step)
            done += step
            if self._tune_k_rho and self.fit_rho and done <= c.burn_in:
                self._retune_k_rho()
                if done == c.burn_in:
                    self.rates["rho"] = _Rate()
            if done == next_keep:
                yield self.sample(done)
                next_keep += c.thin


def flip_hastings_ratio(z: FeatureAllocation, i: int, m: int) -> float:
    """``d* / d`` for proposing to flip ``z[i, m]`` (0-based).

    ``d`` counts columns identical to column ``m`` (itself included) before the
    flip, ``d*`` after it.
    """
    n, k = z.shape
    if not (0 <= i < n and 0 <= m < k):
        raise ValidationError(f"entry ({i}, {m}) outside a {n} x {k} allocation")
    zm = np.array(z.matrix)
    col = zm[:, m].copy()
    d = int(np.sum(np.all(zm == col[:, None], axis=0)))
    zm[i, m] = 1 - zm[i, m]
    d_star = int(np.sum(np.all(zm == zm[:, m][:, None], axis=0)))
    return d_star / d


def run_chain(config: McmcConfig, data: LglfmData | None, prior: PriorSpec,
              init: McmcState | None = None) -> Iterator[ChainSample]:
    return Sampler(config, data, prior, init).run()


def config_dict(config: McmcConfig) -> dict:
    d = asdict(config)
    for key in ("alpha", "tau", "sigmas"):
        d[key] = getattr(config, key).spec()
    d["rho"] = config.rho if isinstance(config.rho, str) else "fixed:" + ",".join(
        str(v + 1) for v in config.rho.value
    )
    return d
