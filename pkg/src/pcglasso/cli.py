"""Command-line front end.

Exit codes: 0 success, 2 usage or invalid flag values, 3 unreadable or
malformed input, 4 numeric precondition failed (non-PD input and similar),
5 a fit did not converge. Errors are reported on stderr as one JSON object.

Default solver tolerances can be overridden with environment variables:
PCGLASSO_OUTER_TOL, PCGLASSO_KKT_TOL, PCGLASSO_OUTER_MAX_ITER,
PCGLASSO_D_TOL, PCGLASSO_R_TOL.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .d_solver import DSolveConfig
from .estimator import SolverConfig, fit
from .exceptions import ConfigurationError, InvalidInputError, NumericalError, PCGLassoError
from .io import ParseError, atomic_open, read_data_csv, read_matrix_csv
from .irrepresentability import MAX_GENERIC_P, hub_irr_closed_form, hub_matrix, irr_heatmap, irr_report
from .matrix_core import SampleData, as_correlation, correlation_from_data, require_pd
from .model_select import cross_validate, lambda_path
from .simulation import METHODS, STRUCTURES, StudyConfig, bench_d_solvers, run_study

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4, 5

ENV_DEFAULTS = {
    "PCGLASSO_OUTER_TOL": ("outer_tol", float),
    "PCGLASSO_KKT_TOL": ("kkt_tol", float),
    "PCGLASSO_OUTER_MAX_ITER": ("outer_max_iter", int),
    "PCGLASSO_R_TOL": ("r_tol", float),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- argument types ----------------------------------------------------------

def _number(kind=float, lo=None, hi=None, lo_open=False, hi_open=False):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}")
        if isinstance(v, float) and not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"not finite: {text!r}")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise argparse.ArgumentTypeError(f"{v} is below the allowed range ({'>' if lo_open else '>='} {lo})")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise argparse.ArgumentTypeError(f"{v} is above the allowed range ({'<' if hi_open else '<='} {hi})")
        return v
    parse.__name__ = kind.__name__
    return parse


def _list(item):
    def parse(text):
        parts = [x for x in text.split(",") if x.strip()]
        if not parts:
            raise argparse.ArgumentTypeError("empty list")
        return [item(x.strip()) for x in parts]
    return parse


nonneg = _number(float, lo=0.0)
alpha_t = _number(float, hi=1.0, hi_open=True)
posint = _number(int, lo=1)


def _solver_config(args, lam=0.0) -> SolverConfig:
    kw = {}
    for var, (name, kind) in ENV_DEFAULTS.items():
        if var in os.environ:
            try:
                kw[name] = kind(os.environ[var])
            except ValueError:
                raise ConfigurationError(f"{var} is not a valid {kind.__name__}")
    d_cfg = DSolveConfig()
    if "PCGLASSO_D_TOL" in os.environ:
        try:
            d_cfg = DSolveConfig(tol=float(os.environ["PCGLASSO_D_TOL"]))
        except ValueError:
            raise ConfigurationError("PCGLASSO_D_TOL is not a valid float")
    return SolverConfig(lam=lam, alpha=args.alpha, d_cfg=d_cfg, restarts=getattr(args, "restarts", 1),
                        seed=getattr(args, "seed", None), **kw)


def _load_corr(args):
    """(CorrelationMatrix, scale or None, n or None) from --data or --corr."""
    if args.data is not None:
        rows, _ = read_data_csv(args.data)
        data = SampleData(rows)
        c, scale = correlation_from_data(data)
        return c, scale, data.n, data
    m = read_matrix_csv(args.corr)
    return as_correlation(m), None, getattr(args, "n", None), None


def _default_grid(c, alpha, k):
    """Log grid from the all-zero threshold (1 - alpha) ||C - I||_inf down to 0.01."""
    top = (1.0 - alpha) * c.offdiag_max()
    if top <= 0.0:
        return [0.0]
    return list(np.geomspace(top, min(0.01, top / 100.0), k))


def _add_input(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", help="CSV of observations (rows), optional header")
    g.add_argument("--corr", help="CSV correlation matrix, no header")


def _add_threads(p):
    p.add_argument("--threads", type=posint, default=os.cpu_count() or 1,
                   help="worker cap (default: available CPUs)")


# -- subcommands ------------------------------------------------------------

def cmd_fit(args) -> int:
    c, scale, _, _ = _load_corr(args)
    if args.lam == 0 and c.lambda_min <= 1e-12:
        raise NumericalError("correlation matrix is singular and lambda = 0")
    res = fit(c, _solver_config(args, args.lam), scale=scale)
    with atomic_open(args.out) as fh:
        fh.write(res.to_json(indent=2))
        fh.write("\n")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_path(args) -> int:
    c, scale, n, _ = _load_corr(args)
    grid = args.lambdas or _default_grid(c, args.alpha, args.n_lambda)
    path = lambda_path(c, grid, args.alpha, _solver_config(args), n=n, scale=scale,
                       gamma_ebic=args.gamma_ebic, mode=args.mode, threads=args.threads)
    with atomic_open(args.out) as fh:
        path.write_csv(fh)
    if path.errors:
        raise NumericalError(f"{len(path.errors)} grid points failed: {path.errors}")
    return EXIT_OK if all(f.converged for f in path.fits) else EXIT_NONCONVERGED


def cmd_select(args) -> int:
    c, scale, n, data = _load_corr(args)
    grid = sorted(args.lambdas or _default_grid(c, args.alpha, args.n_lambda), reverse=True)
    cfg = _solver_config(args)
    if args.criterion == "cv":
        if data is None:
            raise ConfigurationError("cross-validation needs --data")
        cv = cross_validate(data, grid, args.alpha, args.folds, cfg, args.seed, threads=args.threads)
        lam = cv.selected_lambda
        extra = {"criterion": "cv", "folds": cv.folds, "mean_heldout_loglik": cv.mean_heldout_loglik.tolist()}
    else:
        if n is None:
            raise ConfigurationError("BIC/EBIC need the sample size: use --data or pass --n")
        path = lambda_path(c, grid, args.alpha, cfg, n=n, gamma_ebic=args.gamma_ebic)
        best = path.best_index(args.criterion)
        lam = float(path.lambdas[best])
        extra = {"criterion": args.criterion, args.criterion: [getattr(s, args.criterion) if s else None
                                                              for s in path.scores]}
    res = fit(c, _solver_config(args, lam), scale=scale)
    out = {"selected_lambda": lam, "lambda_grid": [float(x) for x in grid], **extra, "fit": res.to_dict()}
    with atomic_open(args.out) as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_irr(args) -> int:
    header = ["source", "p", "irr_pcg", "irr_glasso", "pcg_satisfied", "glasso_satisfied", "pd",
              "irr_pcg_generic", "irr_glasso_generic"]
    if args.hub is not None:
        if len(args.hub) != 4:
            raise ConfigurationError("--hub expects a,b,c,p")
        a, b, c, p = args.hub
        if p != int(p) or p < 2:
            raise ConfigurationError("p must be an integer >= 2")
        p = int(p)
        if a <= 0 or b <= 0:
            raise ConfigurationError("a and b must be positive")
        pcg, gl, pd = hub_irr_closed_form(a, b, c, p)
        if not pd:
            raise NumericalError(f"pd = false: (p-1) c^2 = {(p - 1) * c * c:.6g} >= a b = {a * b:.6g}")
        gen = ("", "")
        if p <= MAX_GENERIC_P:
            rep = irr_report(hub_matrix(a, b, c, p))
            gen = (repr(rep.irr_pcg), repr(rep.irr_glasso))
        row = ["hub", p, repr(pcg), repr(gl), int(pcg < 1), int(gl < 1), 1, *gen]
    else:
        k = read_matrix_csv(args.kstar)
        require_pd(k, "K*")
        rep = irr_report(k)
        row = ["kstar", k.shape[0], repr(rep.irr_pcg), repr(rep.irr_glasso), int(rep.pcg_satisfied),
               int(rep.glasso_satisfied), 1, repr(rep.irr_pcg), repr(rep.irr_glasso)]
    with atomic_open(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(row)
    return EXIT_OK


def _range(text):
    parts = _list(float)(text)
    if len(parts) != 3 or parts[2] < 1 or parts[2] != int(parts[2]):
        raise argparse.ArgumentTypeError("expected lo,hi,count")
    return np.linspace(parts[0], parts[1], int(parts[2]))


def cmd_heatmap(args) -> int:
    if args.b <= 0:
        raise ConfigurationError("b must be positive")
    if np.any(args.a_range <= 0):
        raise ConfigurationError("every a must be positive")
    hm = irr_heatmap(args.a_range, args.c_range, args.b, args.p, check_fraction=args.check_fraction,
                     seed=args.seed)
    with atomic_open(args.out) as fh:
        hm.write_csv(fh)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = StudyConfig(structure=args.structure, p=args.p, blocks=args.blocks, a=args.a, b=args.b, c=args.c,
                      rho=args.rho, n_grid=tuple(args.n), replicates=args.reps, methods=tuple(args.methods),
                      selection=args.selection, seed=args.seed, alpha=args.alpha, threads=args.threads)
    rep = run_study(cfg)
    with atomic_open(args.out) as fh:
        rep.write_csv(fh)
    if args.json:
        with atomic_open(args.json) as fh:
            fh.write(rep.to_json(indent=2))
            fh.write("\n")
    if args.raw:
        with atomic_open(args.raw) as fh:
            rep.write_raw_csv(fh)
    return EXIT_OK


def cmd_bench_d(args) -> int:
    table = bench_d_solvers(args.p, args.reps, args.seed)
    with atomic_open(args.out) as fh:
        table.write_csv(fh)
    if table.max_gap > 1e-8:
        raise NumericalError(f"diagonal and exact Newton disagree by {table.max_gap:.3g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pcglasso", description="Partial-correlation graphical lasso toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one (lambda, alpha) and write a JSON report")
    _add_input(p)
    p.add_argument("--lambda", dest="lam", type=nonneg, required=True)
    p.add_argument("--alpha", type=alpha_t, default=0.0, help="diagonal penalty weight, < 1 (default 0)")
    p.add_argument("--restarts", type=posint, default=1, help="random restarts (default 1)")
    p.add_argument("--seed", type=_number(int, lo=0), default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="regularization path CSV: lambda, edges, loglik, bic, ebic, wall_ms")
    _add_input(p)
    p.add_argument("--lambdas", type=_list(nonneg), help="decreasing comma-separated grid")
    p.add_argument("--n-lambda", type=_number(int, lo=2), default=30,
                   help="size of the default log grid from the all-zero threshold to 0.01 (default 30)")
    p.add_argument("--alpha", type=alpha_t, default=0.0)
    p.add_argument("--n", type=_number(int, lo=2), help="sample size for scores when using --corr")
    p.add_argument("--gamma-ebic", type=nonneg, default=0.5)
    p.add_argument("--mode", choices=("chained", "cold"), default="chained")
    _add_threads(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("select", help="choose lambda by BIC, EBIC or k-fold CV and refit")
    _add_input(p)
    p.add_argument("--criterion", choices=("bic", "ebic", "cv"), default="bic")
    p.add_argument("--lambdas", type=_list(nonneg))
    p.add_argument("--n-lambda", type=_number(int, lo=2), default=30)
    p.add_argument("--alpha", type=alpha_t, default=0.0)
    p.add_argument("--n", type=_number(int, lo=2))
    p.add_argument("--gamma-ebic", type=nonneg, default=0.5)
    p.add_argument("--folds", type=_number(int, lo=2), default=5)
    p.add_argument("--seed", type=_number(int, lo=0), default=0)
    _add_threads(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("irr", help="irrepresentability values for a precision matrix or a hub")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--kstar", help="CSV precision matrix")
    g.add_argument("--hub", type=_list(float), help="a,b,c,p")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_irr)

    p = sub.add_parser("heatmap", help="hub IRR grid CSV: a, c, irr_pcg, irr_glasso, pd")
    p.add_argument("--p", type=_number(int, lo=2), default=15)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--a-range", type=_range, default=np.linspace(0.1, 10.0, 60), help="lo,hi,count")
    p.add_argument("--c-range", type=_range, default=np.linspace(-1.0, 1.0, 61), help="lo,hi,count")
    p.add_argument("--check-fraction", type=_number(float, lo=0.0, hi=1.0), default=0.05)
    p.add_argument("--seed", type=_number(int, lo=0), default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("simulate", help="simulation study summary CSV: method, n, metric, mean, sd")
    p.add_argument("--structure", choices=STRUCTURES, default="hub")
    p.add_argument("--p", type=_number(int, lo=2), default=20)
    p.add_argument("--blocks", type=posint, default=4)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--rho", type=_number(float, lo=-1.0, hi=1.0, lo_open=True, hi_open=True), default=0.5)
    p.add_argument("--n", type=_list(_number(int, lo=2)), default=[500])
    p.add_argument("--reps", type=posint, default=20)
    p.add_argument("--methods", type=_list(str), default=list(METHODS))
    p.add_argument("--selection", choices=("bic", "ebic", "cv"), default="bic")
    p.add_argument("--alpha", type=alpha_t, default=0.0)
    p.add_argument("--seed", type=_number(int, lo=0), default=0)
    _add_threads(p)
    p.add_argument("--out", required=True)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--raw", help="also write per-replicate metrics as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-d", help="diagonal vs exact Newton timing CSV: p, solver, mean_ms, ci_lo, ci_hi")
    p.add_argument("--p", type=_list(_number(int, lo=1)), default=[2, 50, 200])
    p.add_argument("--reps", type=posint, default=10)
    p.add_argument("--seed", type=_number(int, lo=0), default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_d)
    return ap


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    try:
        return args.func(args)
    except ParseError as exc:
        return _fail(EXIT_PARSE, "parse", str(exc))
    except ConfigurationError as exc:
        return _fail(EXIT_USAGE, "configuration", str(exc))
    except (InvalidInputError, NumericalError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except PCGLassoError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))


if __name__ == "__main__":
    sys.exit(main())
