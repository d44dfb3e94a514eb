"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 precondition or verdict
failure, 4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from mixquant.errors import (
    DomainError,
    ExperimentAborted,
    PlugInError,
    PreconditionError,
    ResourceCapError,
)

log = logging.getLogger("mixquant")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_RESOURCE = 0, 2, 3, 4

DEFAULT_GRIDS = {
    "exact-iid": "101,201,401,801,1601,3201",
    "exact-markov": "64,128,256,512,1024",
    "mc": "200,400,800,1600,3200",
}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(args):
    from mixquant.processes import load_model

    return load_model(args.model)


def cmd_simulate(args) -> int:
    from mixquant.processes import simulate

    ts = simulate(_load(args), args.n, args.seed)
    if args.format == "json":
        text = json.dumps({"model": json.loads(ts.model_id), "seed": ts.seed, "values": ts.values.tolist()}) + "\n"
    else:
        text = "value\n" + "".join(f"{v!r}\n" for v in ts.values.tolist())
    _emit(text, args.out)
    return EXIT_OK


def _read_sample(path: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8") if path != "-" else sys.stdin.read()
    if text.lstrip().startswith(("{", "[")):
        data = json.loads(text)
        values = data["values"] if isinstance(data, dict) else data
        return np.asarray(values, dtype=float)
    vals = []
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        try:
            vals.append(float(row[-1]))
        except ValueError:
            continue  # header
    return np.asarray(vals, dtype=float)


def cmd_estimate(args) -> int:
    from mixquant.estimators import estimate_quantile_ci
    from mixquant.processes import model_facts

    x = _read_sample(args.input)
    facts = model_facts(_load(args), args.p) if args.model else None
    est = estimate_quantile_ci(x, args.p, args.level, facts=facts)
    d = {k: getattr(est, k) for k in ("point", "f_hat", "sigma2_hat", "tau2_hat", "ci_lo", "ci_hi", "level", "n", "method")}
    if args.format == "json":
        text = json.dumps(d, indent=2) + "\n"
    else:
        text = ",".join(d) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in d.values()) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_rate(args) -> int:
    from mixquant.experiments import RateExperimentConfig, run_rate, write_rate_svg

    grid = args.n_grid or _int_list(DEFAULT_GRIDS[{"exact-markov-count": "exact-markov", "monte-carlo": "mc"}.get(args.mode, args.mode)])
    config = RateExperimentConfig(
        model=_load(args),
        p=args.p,
        mode=args.mode,
        n_grid=grid,
        replicates=args.replicates,
        master_seed=args.seed,
        y=args.y,
        threads=args.threads,
    )
    report = run_rate(config)
    _emit(report.to_json() + "\n" if args.format == "json" else report.to_csv(), args.out)
    if args.plot:
        write_rate_svg(report, args.plot)
    log.info("slope %.4f (se %.4f); sqrt(n) delta max/min %.3f", report.slope, report.stderr, report.sqrt_n_ratio)
    return EXIT_OK


def cmd_coverage(args) -> int:
    from mixquant.experiments import CoverageConfig, run_coverage

    config = CoverageConfig(
        model=_load(args),
        p=args.p,
        n=args.n,
        replicates=args.replicates,
        level=args.level,
        master_seed=args.seed,
        threads=args.threads,
    )
    report = run_coverage(config)
    _emit(report.to_json() + "\n" if args.format == "json" else report.to_csv(), args.out)
    log.info("coverage %.4f (se %.4f)", report.coverage, report.stderr)
    return EXIT_OK


def cmd_check_conditions(args) -> int:
    from mixquant.experiments import check_conditions

    report = check_conditions(_load(args), args.p)
    _emit(report.to_json() + "\n" if args.format == "json" else report.to_csv(), args.out)
    return EXIT_OK if report.passed else EXIT_PRECONDITION


def cmd_theory(args) -> int:
    from mixquant.experiments import default_level
    from mixquant.processes import FiniteMarkov
    from mixquant.theory_checks import cf_envelope, lemma33_check, taylor_residual, window_bound

    chain = _load(args)
    if not isinstance(chain, FiniteMarkov):
        raise PreconditionError("theory checks need a finite_markov model")
    rows = []
    ok = True
    if args.check == "lemma33":
        t_grid = np.linspace(-math.pi, math.pi, args.t_points)
        rep = lemma33_check(chain, args.p, args.epsilon, args.window, t_grid)
        for r in rep.rows():
            rows.append({"t": r["t"], "n": "", "y": r["y"], "value": rep.delta_hat, "margin": r["margin"]})
        ok = rep.passed()
    else:
        y = args.y if args.y is not None else default_level(chain, args.p)
        n_grid = args.n_grid or (64, 128, 256, 512)
        if args.check == "taylor":
            edge = window_bound(min(n_grid))
            t_grid = np.linspace(-edge, edge, args.t_points)
            for rep in taylor_residual(chain, y, n_grid, t_grid):
                for t, r in zip(rep.t_grid, rep.residuals):
                    rows.append({"t": t, "n": rep.n, "y": y, "value": r, "margin": ""})
        else:
            t_grid = np.linspace(-math.pi, math.pi, args.t_points)
            for n in n_grid:
                rep = cf_envelope(chain, y, n, t_grid)
                for t, m, q in zip(rep.t_grid, rep.modulus, rep.gaussian_ratio):
                    rows.append({"t": t, "n": n, "y": y, "value": m, "margin": q})
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["t", "n", "y", "value", "margin"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_OK if ok else EXIT_PRECONDITION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixquant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=True):
        p.add_argument("--model", required=model_required, help="model JSON file or preset name")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("simulate", help="simulate one sample path")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="quantile and confidence interval for a sample")
    common(p, model_required=False)
    p.add_argument("--input", required=True, help="CSV (last column) or JSON sample; '-' for stdin")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("rate", help="Berry-Esseen rate experiment")
    common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--mode", required=True, choices=("exact-iid", "exact-markov", "exact-markov-count", "mc", "monte-carlo"))
    p.add_argument("--n-grid", type=_int_list)
    p.add_argument("--replicates", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--y", type=float, help="indicator level for exact-markov mode")
    p.add_argument("--plot", help="write a log-log SVG plot here")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("coverage", help="coverage of plug-in confidence intervals")
    common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("check-conditions", help="regularity condition verdicts")
    common(p)
    p.add_argument("--p", type=float, required=True)
    p.set_defaults(func=cmd_check_conditions)

    p = sub.add_parser("theory", help="exact characteristic-function checks on a finite chain")
    common(p)
    p.add_argument("--check", choices=("lemma33", "taylor", "envelope"), default="lemma33")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--window", type=float, default=math.inf)
    p.add_argument("--t-points", type=int, default=64)
    p.add_argument("--n-grid", type=_int_list)
    p.add_argument("--y", type=float)
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", force=True)
    try:
        return args.func(args)
    except ResourceCapError as exc:
        log.error("resource cap: %s", exc)
        return EXIT_RESOURCE
    except (PreconditionError, PlugInError, ExperimentAborted) as exc:
        log.error("precondition failed: %s", exc)
        return EXIT_PRECONDITION
    except (DomainError, OSError, KeyError, json.JSONDecodeError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
