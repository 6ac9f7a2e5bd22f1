"""File formats, data standardization and run configuration.

Matrices are headerless CSV written with 17 significant digits so that
``load_matrix(save_matrix(m))`` reproduces ``m`` bit for bit.  Chains are
JSON lines with a ``<stem>.meta.json`` sidecar.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .allocation import FeatureAllocation
from .errors import ValidationError
from .lglfm import LglfmData
from .mcmc import ChainSample, Fixed, Gamma, McmcConfig, Uniform
from .similarity import DECAY_KINDS, DecayFunction

__all__ = [
    "Dataset",
    "RunConfig",
    "load_matrix",
    "load_z",
    "meta_path",
    "parse_config",
    "parse_perm",
    "parse_prior",
    "read_chain",
    "read_meta",
    "save_matrix",
    "save_z",
    "standardize",
    "write_chain",
    "write_meta",
]

SEED_ENV = "FEATALLOC_SEED"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def load_matrix(path, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a headerless numeric CSV into a float matrix."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for r, line in enumerate(csv.reader(fh), start=1):
            if not line or all(not c.strip() for c in line):
                continue
            if width is None:
                width = len(line)
            elif len(line) != width:
                raise ValidationError(f"{path}: row {r} has {len(line)} columns, expected {width}")
            vals = []
            for c, cell in enumerate(line, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValidationError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c}") from None
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no data")
    m = np.array(rows, dtype=float)
    if expected_shape is not None and m.shape != tuple(expected_shape):
        raise ValidationError(f"{path}: shape {m.shape} does not match expected {tuple(expected_shape)}")
    return m


def save_matrix(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class Dataset:
    """Raw data, per-column transforms and (once standardized) the scaled matrix."""

    raw: np.ndarray
    transforms: tuple[str, ...] = ()
    standardized: np.ndarray | None = None
    means: np.ndarray | None = None
    sds: np.ndarray | None = None

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float)
        if raw.ndim != 2:
            raise ValidationError(f"data must be a matrix, got shape {raw.shape}")
        tr = tuple(self.transforms) or ("none",) * raw.shape[1]
        if len(tr) != raw.shape[1]:
            raise ValidationError(f"{len(tr)} column transforms given for {raw.shape[1]} columns")
        bad = [t for t in tr if t not in ("none", "log")]
        if bad:
            raise ValidationError(f"unknown column transform {bad[0]!r}; use 'none' or 'log'")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "transforms", tr)

    @classmethod
    def with_log_columns(cls, raw, log_columns: Iterable[int] = ()) -> "Dataset":
        """``log_columns`` are 0-based column indices."""
        raw = np.asarray(raw, dtype=float)
        tr = ["none"] * raw.shape[1]
        for c in log_columns:
            if not 0 <= c < raw.shape[1]:
                raise ValidationError(f"log column {c + 1} out of range 1..{raw.shape[1]}")
            tr[c] = "log"
        return cls(raw, tuple(tr))

    def to_lglfm(self) -> LglfmData:
        if self.standardized is None:
            return LglfmData(self.raw)
        return LglfmData(self.standardized, self.means, self.sds)


def standardize(dataset: Dataset) -> Dataset:
    """Apply column transforms, then center and scale each column (n-1 divisor)."""
    x = dataset.raw.copy()
    n = x.shape[0]
    if n < 2:
        raise ValidationError("standardization needs at least two rows")
    for c, t in enumerate(dataset.transforms):
        if t == "log":
            col = x[:, c]
            if np.any(col <= 0):
                r = int(np.argmax(col <= 0))
                raise ValidationError(f"log transform needs positive values; row {r + 1}, column {c + 1} is {col[r]!r}")
            x[:, c] = np.log(col)
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    flat = np.flatnonzero(~(sds > 0))
    if flat.size:
        raise ValidationError(f"column {int(flat[0]) + 1} has zero variance")
    return replace(dataset, standardized=(x - means) / sds, means=means, sds=sds)


# ---------------------------------------------------------------------------
# Feature allocations


def _z_format(path, fmt: str | None) -> str:
    if fmt is None:
        return "text" if str(path).endswith(".txt") else "csv"
    if fmt not in ("csv", "text"):
        raise ValidationError(f"unknown Z format {fmt!r}")
    return fmt


def save_z(path, z: FeatureAllocation, fmt: str | None = None) -> None:
    """CSV: N rows of K 0/1 cells.  Text: one N-character column string per line."""
    fmt = _z_format(path, fmt)
    with open(path, "w") as fh:
        if fmt == "text":
            for s in z.to_strings():
                fh.write(s + "\n")
        else:
            for row in z.matrix:
                fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_z(path, n: int | None = None, fmt: str | None = None) -> FeatureAllocation:
    """Read a binary matrix.  ``n`` is required for an empty compact-text file."""
    fmt = _z_format(path, fmt)
    lines = Path(path).read_text().splitlines()
    if fmt == "text":
        cols = [ln.strip() for ln in lines if ln.strip()]
        if not cols and n is None:
            raise ValidationError(f"{path}: empty feature file; the number of customers is unknown")
        try:
            return FeatureAllocation.from_strings(cols, n)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    rows = [ln.strip() for ln in lines]
    while rows and not rows[-1]:
        rows.pop()
    if not rows:
        if n is None:
            raise ValidationError(f"{path}: empty Z file; the number of customers is unknown")
        return FeatureAllocation.empty(n)
    if all(not r for r in rows):
        z = FeatureAllocation.empty(len(rows))
    else:
        cells = [r.split(",") for r in rows]
        width = len(cells[0])
        out = np.zeros((len(cells), width), dtype=np.int8)
        for i, row in enumerate(cells, start=1):
            if len(row) != width:
                raise ValidationError(f"{path}: row {i} has {len(row)} columns, expected {width}")
            for j, c in enumerate(row, start=1):
                c = c.strip()
                if c not in ("0", "1"):
                    raise ValidationError(f"{path}: entry {c!r} at row {i}, column {j} is not 0 or 1")
                out[i - 1, j - 1] = int(c)
        z = FeatureAllocation(out)
    if n is not None and z.n_customers != n:
        raise ValidationError(f"{path}: {z.n_customers} rows, expected {n}")
    return z


# ---------------------------------------------------------------------------
# Chains


def meta_path(chain_path) -> Path:
    p = Path(chain_path)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.stem
    return p.with_name(stem + ".meta.json")


def write_chain(path, samples: Iterable[ChainSample]) -> int:
    n = 0
    with open(path, "w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")
            n += 1
    return n


def read_chain(path) -> list[ChainSample]:
    out = []
    with open(path) as fh:
        for r, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(ChainSample.from_json(line))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}: bad record on line {r}: {exc}") from None
    return out


def write_meta(chain_path, meta: Mapping) -> Path:
    p = meta_path(chain_path)
    p.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return p


def read_meta(chain_path) -> dict:
    return json.loads(meta_path(chain_path).read_text())


# ---------------------------------------------------------------------------
# Prior specifications


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"cannot parse numbers in {what} {text!r}") from None


def parse_prior(text: str, what: str = "prior"):
    """Parse ``gamma:a,b``, ``uniform:lo,hi``, ``uniform``, ``fixed:v[,w]`` or a bare number."""
    text = text.strip().strip('"')
    kind, _, args = text.partition(":")
    kind = kind.strip().lower()
    if not args:
        if kind == "uniform":
            return Uniform()
        try:
            return Fixed(float(kind))
        except ValueError:
            raise ValidationError(f"cannot parse {what} {text!r}") from None
    vals = _floats(args.strip().strip('"'), what)
    if kind == "gamma" and len(vals) == 2:
        return Gamma(*vals)
    if kind == "uniform" and len(vals) == 2:
        return Uniform(*vals)
    if kind == "fixed" and len(vals) == 1:
        return Fixed(vals[0])
    if kind == "fixed" and len(vals) == 2:
        return Fixed(tuple(vals))
    raise ValidationError(f"cannot parse {what} {text!r}; expected gamma:a,b, uniform:lo,hi or fixed:v")


def parse_perm(text: str, n: int | None = None):
    """``uniform`` or a 1-based list ``[fixed:]"3,1,2"``; returns ``"uniform"`` or ``Fixed`` (0-based)."""
    text = text.strip().strip('"')
    if text.lower() == "uniform":
        return "uniform"
    if text.lower().startswith("fixed:"):
        text = text[6:].strip().strip('"')
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"cannot parse permutation {text!r}") from None
    m = len(vals) if n is None else n
    if sorted(vals) != list(range(1, m + 1)):
        raise ValidationError(f"permutation {text!r} is not an ordering of 1..{m}")
    return Fixed(tuple(v - 1 for v in vals))


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Everything settable from the command line.

    Config-file keys are the long flag names without the leading dashes.
    """

    prior: str = "ibp"
    data: str | None = None
    distances: str | None = None
    similarity: str = "exponential"
    temp: str = "fixed:1.0"
    shift: float = 1.0
    const: float = 1.0
    perm: str = "uniform"
    alpha: str = "gamma:1.0,1.0"
    sigmas: str = "uniform:0.0,1.0"
    samples: int = 1000
    burnin: int = 0
    thin: int = 1
    updates_per_scan: int = 10
    truncation: float = 1000.0
    k_rho: int | None = None
    sd_tau: float = 0.5
    sd_sigma: float = 0.02
    standardize: bool = True
    log_columns: str = ""
    jitter: bool = False
    seed: int | None = None
    chains: int = 1
    out: str | None = None

    @staticmethod
    def keys() -> list[str]:
        return [f.name.replace("_", "-") for f in fields(RunConfig)]

    def validate(self, required: Sequence[str] = ()) -> "RunConfig":
        if self.prior not in ("ibp", "aibd"):
            raise ValidationError(f"prior must be 'ibp' or 'aibd', got {self.prior!r}")
        if self.similarity not in DECAY_KINDS:
            raise ValidationError(f"similarity must be one of {', '.join(DECAY_KINDS)}, got {self.similarity!r}")
        for name in required:
            if getattr(self, name.replace("-", "_")) in (None, ""):
                raise ValidationError(f"missing required setting '{name}'")
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        parse_prior(self.temp, "temp")
        parse_prior(self.alpha, "alpha")
        parse_prior(self.sigmas, "sigmas")
        parse_perm(self.perm)
        self.log_column_indices()
        return self

    def log_column_indices(self) -> list[int]:
        if not self.log_columns.strip():
            return []
        try:
            return [int(v) - 1 for v in self.log_columns.split(",")]
        except ValueError:
            raise ValidationError(f"cannot parse log-columns {self.log_columns!r}") from None

    def decay(self) -> DecayFunction:
        return DecayFunction(self.similarity, const=self.const, shift=self.shift)

    def mcmc_config(self, n: int | None = None, seed: int | None = None) -> McmcConfig:
        rho = parse_perm(self.perm, n)
        sig = parse_prior(self.sigmas, "sigmas")
        if isinstance(sig, Fixed) and not isinstance(sig.value, tuple):
            sig = Fixed((sig.value, sig.value))
        cfg = McmcConfig(
            n_samples=self.samples,
            burn_in=self.burnin,
            thin=self.thin,
            updates_per_scan=self.updates_per_scan,
            truncation_divisor=self.truncation,
            k_rho=self.k_rho,
            proposal_sd_tau=self.sd_tau,
            proposal_sd_sigma=self.sd_sigma,
            alpha=parse_prior(self.alpha, "alpha"),
            tau=parse_prior(self.temp, "temp"),
            rho=rho,
            sigmas=sig,
            seed=self.seed if seed is None else seed,
        )
        if n is not None:
            cfg.validate(n)
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name.replace('_', '-')} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {
    "shift": float, "const": float, "truncation": float, "sd_tau": float, "sd_sigma": float,
    "samples": int, "burnin": int, "thin": int, "updates_per_scan": int, "k_rho": int,
    "seed": int, "chains": int, "standardize": bool, "jitter": bool,
}


def _coerce(name: str, value, where: str):
    typ = _FIELD_TYPES.get(name, str)
    if value is None or not isinstance(value, str):
        return value
    v = value.strip()
    if typ is str:
        return v
    if typ is bool:
        low = v.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValidationError(f"{where}: '{name.replace('_', '-')}' expects true/false, got {v!r}")
    try:
        return typ(v)
    except ValueError:
        raise ValidationError(f"{where}: '{name.replace('_', '-')}' expects {typ.__name__}, got {v!r}") from None


def config_from_mapping(values: Mapping[str, object], base: RunConfig | None = None, where: str = "config") -> RunConfig:
    valid = {f.name for f in fields(RunConfig)}
    cfg = replace(base) if base is not None else RunConfig()
    for key, value in values.items():
        name = key.strip().replace("-", "_")
        if name not in valid:
            raise ValidationError(
                f"{where}: unknown key {key!r}; valid keys are: {', '.join(RunConfig.keys())}"
            )
        setattr(cfg, name, _coerce(name, value, where))
    return cfg


def parse_config(path=None, overrides: Mapping[str, object] | None = None,
                 env: Mapping[str, str] | None = None) -> RunConfig:
    """Read a flat ``key = value`` file; ``overrides`` (e.g. CLI flags) win.

    If no seed is set anywhere, ``FEATALLOC_SEED`` from the environment is used.
    """
    cfg = RunConfig()
    if path is not None:
        values: dict[str, str] = {}
        with open(path) as fh:
            for r, line in enumerate(fh, start=1):
                s = line.split("#", 1)[0].strip()
                if not s:
                    continue
                key, eq, value = s.partition("=")
                if not eq:
                    raise ValidationError(f"{path}: line {r} is not of the form key = value")
                values[key.strip()] = value.strip()
        cfg = config_from_mapping(values, cfg, where=str(path))
    if overrides:
        cfg = config_from_mapping({k: v for k, v in overrides.items() if v is not None}, cfg, where="flags")
    if cfg.seed is None:
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            cfg.seed = _coerce("seed", env[SEED_ENV], SEED_ENV)
    return cfg.validate()
