"""Command line: ``qpcpanel mc`` runs simulations, ``qpcpanel fit`` estimates from CSV.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
import yaml

from qpcpanel.baselines import estimate_ls, estimate_pc_bai
from qpcpanel.errors import (
    DataError,
    DegenerateError,
    DimensionError,
    RankDeficiencyError,
    SingularityError,
)
from qpcpanel.factor_count import eigenvalue_ratio
from qpcpanel.inference import confidence_intervals
from qpcpanel.io import read_panel
from qpcpanel.montecarlo import McConfig, run_monte_carlo, write_report
from qpcpanel.qpc import EstimateOptions, estimate_bn, estimate_qpc

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpcpanel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mc = sub.add_parser("mc", help="run a Monte Carlo experiment")
    mc.add_argument("--config", required=True, help="YAML file of flat key-value settings")
    mc.add_argument("--reps", type=int, help="replications per grid cell (default 500)")
    mc.add_argument("--seed", type=int)
    mc.add_argument("--out", help="output path (stdout if omitted)")
    mc.add_argument("--format", choices=("csv", "markdown"))
    mc.add_argument("--workers", type=int)

    fit = sub.add_parser("fit", help="estimate a panel stored as CSV")
    fit.add_argument("--data", required=True, help="CSV file (long) or directory (wide)")
    fit.add_argument("--format", choices=("long", "wide"), default="long")
    fit.add_argument("--estimator", choices=("qpc", "bn", "pc", "ls"), default="qpc")
    fit.add_argument("--factors", type=int, help="factor count (qpc counts the initial condition)")
    fit.add_argument("--eigr", action="store_true", help="report the eigenvalue-ratio factor count (qpc)")
    fit.add_argument(
        "--covariance", choices=("plugin-kronecker", "plugin-homoskedastic"), default="plugin-kronecker"
    )
    fit.add_argument("--level", type=float, default=0.95)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as e:
        raise DataError(f"cannot read config: {e}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"config is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError("config must be a key-value mapping")
    return doc


def cmd_mc(args) -> int:
    doc = _load_config(args.config)
    out = args.out if args.out is not None else doc.get("out")
    fmt = args.format or doc.get("format", "csv")
    workers = args.workers or int(doc.get("workers", 1))
    if fmt not in ("csv", "markdown"):
        raise UsageError(f"format must be csv or markdown, got {fmt!r}")
    if args.reps is not None:
        doc["replications"] = args.reps
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = McConfig.from_mapping(doc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from e
    report = run_monte_carlo(cfg, workers=max(1, workers))
    write_report(report, out, fmt)
    return EXIT_OK


def _print_fit(res, level: float) -> None:
    names = ["alpha"] + [f"beta{k}" for k in range(1, res.theta_hat.K + 1)]
    se = res.se
    ci = confidence_intervals(res, level=level) if res.cov is not None else None
    pct = f"{100 * level:g}%"
    print(f"estimator: {res.estimator}   factors: {res.R}   objective: {res.objective:.10g}")
    print(f"converged: {res.converged}   starts agreeing: {res.starts_agreeing}")
    print(f"{'coef':<8}{'estimate':>14}{'se':>14}{pct + ' lo':>14}{pct + ' hi':>14}")
    for j, name in enumerate(names):
        est = res.theta_hat.vector[j]
        cols = [f"{est:14.6f}"]
        if se is None:
            cols += [f"{'NA':>14}"] * 3
        else:
            cols += [f"{se[j]:14.6f}", f"{ci[j, 0]:14.6f}", f"{ci[j, 1]:14.6f}"]
        print(f"{name:<8}" + "".join(cols))


def cmd_fit(args) -> int:
    if args.eigr and args.estimator != "qpc":
        raise UsageError("--eigr needs --estimator qpc")
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    data = read_panel(args.data, args.format)
    if args.estimator == "ls":
        res = estimate_ls(data)
    else:
        default_R = 3 if args.estimator == "qpc" else 2
        R = default_R if args.factors is None else args.factors
        if R < 0:
            raise UsageError("--factors must be non-negative")
        if args.estimator == "pc":
            res = estimate_pc_bai(data, EstimateOptions(R=R, covariance=None))
        else:
            opts = EstimateOptions(R=R, covariance=args.covariance)
            res = (estimate_qpc if args.estimator == "qpc" else estimate_bn)(data, opts)
    _print_fit(res, args.level)
    if args.eigr:
        rep = eigenvalue_ratio(res.extra["panel"], res.theta_hat)
        print("eigenvalue ratios: " + " ".join(f"{r:.4f}" for r in rep.ratios))
        flag = " (degenerate)" if rep.degenerate else ""
        print(f"selected number of factors: {rep.R_hat}{flag}")
    if not res.converged:
        print("warning: the search did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return cmd_mc(args) if args.command == "mc" else cmd_fit(args)
    except UsageError as e:
        print(f"qpcpanel: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, RankDeficiencyError, FileNotFoundError) as e:
        print(f"qpcpanel: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SingularityError, DegenerateError, np.linalg.LinAlgError, ArithmeticError) as e:
        print(f"qpcpanel: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"qpcpanel: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
