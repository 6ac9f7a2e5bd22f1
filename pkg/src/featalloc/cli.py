"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
Machine-readable output goes to stdout (or ``--out``); progress to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .diagnostics import (
    accuracy_report,
    dic,
    feature_count_histogram,
    sharing_summary,
    squared_correlation,
)
from .errors import NumericalError, ValidationError
from .io import (
    Dataset,
    RunConfig,
    load_matrix,
    load_z,
    parse_config,
    parse_perm,
    parse_prior,
    read_chain,
    save_matrix,
    standardize,
    write_meta,
)
from .mcmc import ChainSample, Fixed, PriorSpec, Sampler, config_dict
from .priors import (
    AibdParams,
    FeatureCountLaw,
    IbpParams,
    aibd_logpmf,
    enumerate_allocations,
    harmonic,
    ibp_logpmf,
    sample_aibd,
    sample_ibp,
)
from .similarity import DECAY_KINDS, DecayFunction, DistanceMatrix, validate_axioms

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = RunConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def build_hash() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Argument definitions


def _d(name: str) -> str:
    return f"(default: {getattr(DEFAULTS, name)})"


def _add_similarity(p, temp_help: str) -> None:
    p.add_argument("--distances", help="N x N distance CSV, no header (default: none)")
    p.add_argument("--similarity", choices=DECAY_KINDS, help=f"decay function {_d('similarity')}")
    p.add_argument("--temp", help=temp_help)
    p.add_argument("--shift", type=float, help=f"reciprocal decay shift {_d('shift')}")
    p.add_argument("--const", type=float, help=f"constant decay value {_d('const')}")
    p.add_argument("--jitter", action="store_true", default=None,
                   help="add 1e-5 to off-diagonal distances (default: False)")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="featalloc", description="IBP and AIBD feature allocation models")
    p.add_argument("--version", action="version", version=f"featalloc {__version__} (build {build_hash()})")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("sample-prior", help="draw feature allocations from the prior",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--prior", choices=("ibp", "aibd"), default="ibp")
    s.add_argument("--n", type=int, default=None, help="number of customers (IBP without distances)")
    s.add_argument("--alpha", type=float, default=1.0, help="mass parameter")
    s.add_argument("--perm", default="uniform", help="'uniform' (fresh order per draw) or 1-based list")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None, help="JSON-lines output; stdout if omitted")
    _add_similarity(s, "temperature (default: 1.0)")

    s = sub.add_parser("logpmf", help="log-pmf of an allocation",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--prior", choices=("ibp", "aibd"), default="ibp")
    s.add_argument("--z", required=True, help="Z as CSV, or compact text if the name ends in .txt")
    s.add_argument("--alpha", type=float, required=True, help="mass parameter")
    s.add_argument("--perm", default=None, help="1-based arrival order (default: natural order)")
    _add_similarity(s, "temperature (default: 1.0)")

    s = sub.add_parser("fit", help="run the posterior sampler")
    s.add_argument("--config", help="key = value file; flags override it (default: none)")
    s.add_argument("--data", help="N x D data CSV, no header (required)")
    s.add_argument("--prior", choices=("ibp", "aibd"), help=f"allocation prior {_d('prior')}")
    _add_similarity(s, f"fixed:T or gamma:a,b {_d('temp')}")
    s.add_argument("--perm", help=f"uniform or fixed:\"1,2,...\" {_d('perm')}")
    s.add_argument("--alpha", help=f"gamma:a,b or fixed:v {_d('alpha')}")
    s.add_argument("--sigmas", help=f"uniform:lo,hi, gamma:a,b or fixed:sx,sa {_d('sigmas')}")
    s.add_argument("--samples", type=int, help=f"total scans including burn-in {_d('samples')}")
    s.add_argument("--burnin", type=int, help=f"burn-in scans {_d('burnin')}")
    s.add_argument("--thin", type=int, help=f"keep every thin-th scan {_d('thin')}")
    s.add_argument("--updates-per-scan", type=int, help=f"parameter updates per Z scan {_d('updates_per_scan')}")
    s.add_argument("--truncation", type=float, help=f"singleton truncation divisor {_d('truncation')}")
    s.add_argument("--k-rho", type=int, help="permutation shuffle size (default: tuned during burn-in)")
    s.add_argument("--sd-tau", type=float, help=f"temperature proposal sd {_d('sd_tau')}")
    s.add_argument("--sd-sigma", type=float, help=f"noise-scale proposal sd {_d('sd_sigma')}")
    s.add_argument("--standardize", action=argparse.BooleanOptionalAction,
                   help=f"center and scale data columns {_d('standardize')}")
    s.add_argument("--log-columns", help="1-based columns to log-transform first (default: none)")
    s.add_argument("--chains", type=int, help=f"independent chains {_d('chains')}")
    s.add_argument("--seed", type=int, help="base seed; chain c uses seed + c (default: FEATALLOC_SEED or random)")
    s.add_argument("--out", help="chain JSON-lines path (required)")

    s = sub.add_parser("diagnose", help="summaries of a sampled chain",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--chain", required=True, help="chain JSON-lines file")
    s.add_argument("--report", required=True, choices=("sharing", "correlation", "accuracy", "dic", "histogram"))
    s.add_argument("--data", default=None, help="data CSV; for dic, recompute log-likelihoods from it")
    s.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize --data as fit does")
    s.add_argument("--log-columns", default="", help="as for fit")
    s.add_argument("--alpha", type=float, default=None,
                   help="mass for theoretical values (default: sample-average over the chain)")
    s.add_argument("--burnin", type=int, default=0, help="drop this many leading records")
    s.add_argument("--out", default=None, help="CSV output; stdout if omitted")

    s = sub.add_parser("validate-similarity", help="check decay-function axioms on a grid",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--similarity", choices=DECAY_KINDS, default="exponential")
    s.add_argument("--shift", type=float, default=1.0)
    s.add_argument("--const", type=float, default=1.0)
    s.add_argument("--tau-grid", default="0,0.1,0.5,1,2,5")
    s.add_argument("--d-grid", default="0,0.1,0.5,1,2,5,10")

    s = sub.add_parser("enumerate", help="exhaustive pmf table for tiny N",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--max-k", type=int, required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--perm", default=None, help="1-based arrival order (default: natural order)")
    _add_similarity(s, "temperature (default: 1.0)")
    return p


# ---------------------------------------------------------------------------
# Shared helpers


def _distances(args, n: int | None = None) -> DistanceMatrix:
    shape = (n, n) if n is not None else None
    return DistanceMatrix(load_matrix(args.distances, shape), jitter=bool(args.jitter))


def _decay(args) -> DecayFunction:
    return DecayFunction(
        args.similarity or DEFAULTS.similarity,
        const=DEFAULTS.const if args.const is None else args.const,
        shift=DEFAULTS.shift if args.shift is None else args.shift,
    )


def _temp_value(text: str | None) -> float:
    if text is None:
        return 1.0
    t = parse_prior(text, "temp")
    if not isinstance(t, Fixed) or isinstance(t.value, tuple):
        raise ValidationError("--temp must be a single number here")
    return float(t.value)


def _aibd_params(args, alpha: float, n: int | None = None, perm=None) -> AibdParams:
    if not args.distances:
        raise UsageError("the aibd prior needs --distances")
    D = _distances(args, n)
    return AibdParams.build(alpha, D, _decay(args), _temp_value(args.temp), perm)


def _perm(text: str | None, n: int):
    if text is None:
        return None
    p = parse_perm(text, n)
    return None if p == "uniform" else p.value


# ---------------------------------------------------------------------------
# Commands


def cmd_logpmf(args) -> int:
    z = load_z(args.z)
    if args.prior == "ibp":
        value = ibp_logpmf(z, IbpParams(args.alpha, z.n_customers))
    else:
        value = aibd_logpmf(z, _aibd_params(args, args.alpha, z.n_customers, _perm(args.perm, z.n_customers)))
    print(_fmt(value))
    return EXIT_OK


def cmd_sample_prior(args) -> int:
    if args.samples < 1:
        raise ValidationError("--samples must be >= 1")
    rng = np.random.default_rng(args.seed)
    if args.prior == "aibd":
        base = _aibd_params(args, args.alpha)
        n = base.n_customers
    else:
        n = args.n if args.n is not None else (_distances(args).n if args.distances else None)
        if n is None:
            raise UsageError("the ibp prior needs --n (or --distances to fix N)")
        ibp = IbpParams(args.alpha, n)
    fixed = parse_perm(args.perm, n)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for it in range(1, args.samples + 1):
            if args.prior == "ibp":
                z = sample_ibp(ibp, rng)
                rho = tuple(range(n))
                lp = ibp_logpmf(z, ibp)
                tau = 0.0
            else:
                rho = tuple(rng.permutation(n)) if fixed == "uniform" else fixed.value
                p = AibdParams(base.mass, base.similarity, rho)
                z = sample_aibd(p, rng)
                lp = aibd_logpmf(z, p)
                tau = _temp_value(args.temp)
            rec = ChainSample(it, tuple(z.to_strings()), args.alpha, tau, tuple(int(r) + 1 for r in rho),
                              math.nan, math.nan, math.nan, lp)
            out.write(rec.to_json() + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _load_data(path: str, do_standardize: bool, log_columns: list[int]) -> Dataset:
    ds = Dataset.with_log_columns(load_matrix(path), log_columns)
    return standardize(ds) if do_standardize else ds


def _chain_path(out: str, c: int, k: int) -> str:
    if k == 1:
        return out
    p = Path(out)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.stem
    return str(p.with_name(f"{stem}.chain{c + 1}.jsonl"))


def _run_one_chain(cfg: RunConfig, c: int, seed: int) -> dict:
    """Run chain ``c`` and write its output and sidecar; returns a summary."""
    ds = _load_data(cfg.data, cfg.standardize, cfg.log_column_indices())
    data = ds.to_lglfm()
    n = data.n
    if cfg.prior == "aibd":
        D = DistanceMatrix(load_matrix(cfg.distances, (n, n)), jitter=cfg.jitter)
        prior = PriorSpec("aibd", D, cfg.decay())
    else:
        prior = PriorSpec("ibp", n_customers=n)
    mc = cfg.mcmc_config(n, seed)
    path = _chain_path(cfg.out, c, cfg.chains)
    sampler = Sampler(mc, data, prior)
    t0 = time.time()
    total = (mc.n_samples - mc.burn_in) // mc.thin
    step = max(total // 10, 1)
    kept = 0
    with open(path, "w") as fh:
        for s in sampler.run():
            fh.write(s.to_json() + "\n")
            kept += 1
            if kept % step == 0:
                _progress(f"chain {c + 1}: {kept}/{total} samples, {time.time() - t0:.1f}s")
    meta = {
        "version": __version__,
        "build": build_hash(),
        "chain": c + 1,
        "seed": seed,
        "config": cfg.to_text(),
        "mcmc": config_dict(mc),
        "acceptance": sampler.acceptance_rates(),
        "n_customers": n,
        "n_dims": data.dim,
        "retained": kept,
        "seconds": time.time() - t0,
    }
    if ds.means is not None:
        meta["column_means"] = [_fmt(v) for v in ds.means]
        meta["column_sds"] = [_fmt(v) for v in ds.sds]
    write_meta(path, meta)
    return {"path": path, "retained": kept}


def cmd_fit(args) -> int:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "func")}
    cfg = parse_config(args.config, overrides).validate(["data", "out"])
    if cfg.prior == "aibd" and not cfg.distances:
        raise ValidationError("the aibd prior needs 'distances'")
    base = cfg.seed if cfg.seed is not None else int(np.random.SeedSequence().entropy % (2**31))
    seeds = [base + c for c in range(cfg.chains)]
    if cfg.chains == 1:
        results = [_run_one_chain(cfg, 0, seeds[0])]
    else:
        workers = min(cfg.chains, os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one_chain, cfg, c, seeds[c]) for c in range(cfg.chains)]
            results = [f.result() for f in futs]
    for r in results:
        _progress(f"wrote {r['retained']} samples to {r['path']}")
    return EXIT_OK


def _write_rows(out, rows: list[list[str]]) -> None:
    fh = open(out, "w") if out else sys.stdout
    try:
        for r in rows:
            fh.write(",".join(r) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_diagnose(args) -> int:
    chain = read_chain(args.chain)[args.burnin:]
    if not chain:
        raise ValidationError(f"{args.chain}: no samples")
    draws = [s.allocation() for s in chain]
    n = draws[0].n_customers
    alphas = np.array([s.alpha for s in chain])
    rep = args.report
    if rep == "sharing":
        m = sharing_summary(draws).pair_means
        if args.out:
            save_matrix(args.out, m)
        else:
            _write_rows(None, [[_fmt(v) for v in row] for row in m])
    elif rep == "correlation":
        m = squared_correlation(draws)
        if args.out:
            save_matrix(args.out, m)
        else:
            _write_rows(None, [[_fmt(v) for v in row] for row in m])
    elif rep == "accuracy":
        a = args.alpha
        if a is None:
            if np.ptp(alphas) > 0:
                raise ValidationError("alpha varies across the chain; pass --alpha")
            a = float(alphas[0])
        r = accuracy_report(draws, a, n)
        _write_rows(args.out, [["metric", "value"],
                               ["max_feature_prob_error", _fmt(r.max_feature_prob_error)],
                               ["mean_active_feature_error", _fmt(r.mean_active_feature_error)]])
    elif rep == "dic":
        data = None
        if args.data:
            cols = [int(v) - 1 for v in args.log_columns.split(",")] if args.log_columns.strip() else []
            data = _load_data(args.data, args.standardize, cols).to_lglfm()
        _write_rows(args.out, [["dic"], [_fmt(dic(chain, data))]])
    else:
        hist = feature_count_histogram(draws)
        hn = harmonic(n)
        rates = [args.alpha * hn] if args.alpha is not None else list(alphas * hn)
        kmax = max(hist)
        rows = [["k", "frequency", "theoretical"]]
        laws = [FeatureCountLaw(r) for r in rates]
        for k in range(kmax + 1):
            theo = math.fsum(law.pmf(k) for law in laws) / len(laws)
            rows.append([str(k), _fmt(hist.get(k, 0.0)), _fmt(theo)])
        _write_rows(args.out, rows)
    return EXIT_OK


def cmd_validate_similarity(args) -> int:
    f = DecayFunction(args.similarity, const=args.const, shift=args.shift)
    taus = [float(v) for v in args.tau_grid.split(",")]
    ds = [float(v) for v in args.d_grid.split(",")]
    rep = validate_axioms(f, taus, ds)
    print(f"monotone,{rep.monotone}")
    print(f"tempered,{rep.tempered}")
    print(f"constant_at_zero,{rep.constant_at_zero}")
    for name, where in rep.violations.items():
        _progress(f"{name} violated at {where}")
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_enumerate(args) -> int:
    n, alpha = args.n, args.alpha
    ibp = IbpParams(alpha, n)
    if args.distances:
        aibd = _aibd_params(args, alpha, n, _perm(args.perm, n))
    else:
        aibd = AibdParams.build(alpha, DistanceMatrix.temporal(n), _decay(args),
                                _temp_value(args.temp), _perm(args.perm, n))
    sums_ibp = [0.0] * (args.max_k + 1)
    sums_aibd = [0.0] * (args.max_k + 1)
    for key in enumerate_allocations(n, args.max_k):
        z = key.to_allocation()
        li, la = ibp_logpmf(z, ibp), aibd_logpmf(z, aibd)
        sums_ibp[key.n_features] += math.exp(li)
        sums_aibd[key.n_features] += math.exp(la)
        print(f"{key}\t{_fmt(li)}\t{_fmt(la)}")
    law = FeatureCountLaw(alpha * harmonic(n))
    print("mass\t" + "\t".join(
        f"K={k}:{_fmt(sums_ibp[k])},{_fmt(sums_aibd[k])},{_fmt(law.pmf(k))}" for k in range(args.max_k + 1)
    ))
    return EXIT_OK


COMMANDS = {
    "sample-prior": cmd_sample_prior,
    "logpmf": cmd_logpmf,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "validate-similarity": cmd_validate_similarity,
    "enumerate": cmd_enumerate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:
        # --help and --version exit through argparse.
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
