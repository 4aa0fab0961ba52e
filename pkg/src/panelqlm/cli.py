"""
Command-line front end.

    panelqlm simulate --N 100 --T 4 --rho 0.5 --seed 1 --out panel.csv
    panelqlm estimate --data panel.csv --model fe
    panelqlm test     --data panel.csv --model fe --h0-rho 1.0
    panelqlm confset  --data panel.csv --grid -0.5:1:151
    panelqlm gmm-ar   --data panel.csv --h0-rho 0.5
    panelqlm power    --T 4 --e-grid 0:3:31
    panelqlm verify   --t-range 3 12
    panelqlm mc       --spec table1.cfg --jobs 4 --out table1.csv

Exit status: 0 on success, 2 on invalid input, 1 when the computation
itself fails (for example a fit that does not converge).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import DESIGNS, DgpConfig, generate, read_csv, write_csv
from .estimation import FitError, Restriction, fit
from .harness import emit_table, preset, read_spec, run, write_manifest
from .inference import (
    confidence_set,
    gmm_ar_test,
    qlm1_test,
    qlm_test,
    _fixes_unit_root,
)
from .likelihood import InadmissibleParameterError
from .power import power_curve, verify_constants

__all__ = ["main", "build_parser"]

log = logging.getLogger("panelqlm")


class UsageError(ValueError):
    """Invalid command-line input (exit status 2)."""


# ---------------------------------------------------------------------------
# argument helpers

def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be lo:hi:n, got {text!r}") from None
    if n < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"grid needs n >= 1 and lo <= hi, got {text!r}")
    return np.linspace(lo, hi, n)


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _add_data(p):
    p.add_argument("--data", required=True, help="panel CSV (long id,t,y unless --wide)")
    p.add_argument("--wide", action="store_true", help="panel CSV is an N x T matrix")


def _add_model(p):
    p.add_argument("--model", choices=("re", "fe"), default="fe",
                   help="random- or fixed-effects likelihood (default fe)")
    p.add_argument("--time-het", action="store_true",
                   help="allow period-specific error variances (default: homoskedastic)")


def _add_out(p):
    p.add_argument("--out", help="output path (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panelqlm",
                                 description="Quasi-LM inference for the panel AR(1) model.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="draw a synthetic panel")
    p.add_argument("--N", type=_positive_int, required=True, help="number of individuals")
    p.add_argument("--T", type=_positive_int, required=True, help="number of periods")
    p.add_argument("--rho", type=float, required=True, help="autoregressive coefficient")
    p.add_argument("--design", choices=DESIGNS, default="S_Normal",
                   help="initial-condition / error design")
    p.add_argument("--sigma-mu-sq", type=float, default=1.0, help="variance of the effects")
    p.add_argument("--remove-time-effects", action="store_true",
                   help="subtract cross-sectional means period by period")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--replication", type=int, default=0, help="replication index of the stream")
    p.add_argument("--wide", action="store_true", help="write an N x T matrix")
    _add_out(p)

    p = sub.add_parser("estimate", help="quasi-ML fit, optionally with rho fixed")
    _add_data(p)
    _add_model(p)
    p.add_argument("--h0-rho", type=float, help="fix rho at this value")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")
    _add_out(p)

    p = sub.add_parser("test", help="QLM test of a hypothesis on rho or a linear restriction")
    _add_data(p)
    _add_model(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--h0-rho", type=float, help="hypothesized rho (1.0 selects the qlm1 form)")
    g.add_argument("--restriction", nargs=2, metavar=("A.csv", "a.csv"),
                   help="restriction A theta_n = a in reparametrized coordinates")
    p.add_argument("--centered-opg", action="store_true", help="center the OPG estimate")
    p.add_argument("--level", type=_probability, default=0.05, help="test level")
    _add_out(p)

    p = sub.add_parser("confset", help="confidence set for rho by inverting the QLM test")
    _add_data(p)
    _add_model(p)
    p.add_argument("--level", type=_probability, default=0.95, help="confidence level")
    p.add_argument("--grid", type=_grid, default=None,
                   help="grid lo:hi:n of candidate rho values (default -0.99:1:401)")
    p.add_argument("--centered-opg", action="store_true", help="center the OPG estimate")
    _add_out(p)

    p = sub.add_parser("gmm-ar", help="Anderson-Rubin type GMM test of rho")
    _add_data(p)
    p.add_argument("--h0-rho", type=float, required=True, help="hypothesized rho")
    p.add_argument("--uncentered", action="store_true",
                   help="use the uncentered moment covariance")
    _add_out(p)

    p = sub.add_parser("power", help="local asymptotic power curve")
    p.add_argument("--T", type=_positive_int, required=True, help="number of periods (>= 4)")
    p.add_argument("--e-grid", type=_grid, default=_grid("0:3:31"),
                   help="grid lo:hi:n of local alternatives e (default 0:3:31)")
    p.add_argument("--variant", choices=("qlm_c_tsh", "gmm_ar", "map"), default="qlm_c_tsh",
                   help="which test's curve")
    p.add_argument("--level", type=_probability, default=0.05, help="test level")
    _add_out(p)

    p = sub.add_parser("verify", help="check the analytic constants")
    p.add_argument("--t-range", nargs=2, type=int, default=(3, 12), metavar=("LO", "HI"),
                   help="range of T to check (inclusive)")
    _add_out(p)

    p = sub.add_parser("mc", help="Monte Carlo size/power table")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="config file with an [experiment] section")
    src.add_argument("--preset", help="built-in table preset, e.g. table1")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--replications", type=int, help="replications per cell (overrides)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--layout", choices=("paper", "long"), default="paper",
                   help="rho by column table, or one row per cell")
    p.add_argument("--manifest", help="write a JSON run manifest to this path")
    _add_out(p)
    return ap


# ---------------------------------------------------------------------------
# commands

def _load(args):
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"data file not found: {args.data}")
    try:
        return read_csv(path, wide=args.wide)
    except ValueError as exc:
        raise UsageError(f"malformed panel CSV {args.data}: {exc}") from exc


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.10g" % v
    return v


def _param_names(model, k, prefix):
    names = [prefix[0], prefix[1]] + [f"{prefix[2]}{j + 1}" for j in range(k)]
    if model == "re":
        names.append(prefix[3])
    return names


def cmd_simulate(args):
    cfg = DgpConfig(N=args.N, T=args.T, rho=args.rho, sigma_mu_sq=args.sigma_mu_sq,
                    init_design=args.design, remove_time_effects=args.remove_time_effects,
                    seed=args.seed, replication=args.replication)
    _emit(write_csv(generate(cfg), wide=args.wide), args.out)


def cmd_estimate(args):
    data = _load(args)
    tsh = not args.time_het
    R = None
    if args.h0_rho is not None:
        dim = 2 + (1 if tsh else data.T - 1) + (args.model == "re")
        R = Restriction.on_rho(args.h0_rho, dim)
    fr = fit(data, args.model, R, tsh)
    th = fr.theta.to_vector()
    names = _param_names(args.model, len(fr.theta.zeta),
                         ("rho", "sigma_v_sq", "zeta", "pi_tilde"))
    rec = dict(zip(names, th.tolist()))
    if fr.theta_n is not None:
        nn = _param_names(args.model, len(fr.theta_n.z), ("r", "sv", "z", "p"))
        rec.update(zip(nn, fr.theta_n.to_vector().tolist()))
    rec.update(loglik=fr.loglik, converged=fr.converged, regime=fr.regime,
               gradient_norm=fr.gradient_norm, n_starts_used=fr.n_starts_used)
    if args.format == "json":
        _emit(json.dumps(rec, indent=2) + "\n", args.out)
    else:
        _emit(_rows_csv(list(rec), [list(rec.values())]), args.out)
    return 0 if fr.converged else 1


def _read_restriction(paths):
    try:
        A = np.atleast_2d(np.loadtxt(paths[0], delimiter=",", ndmin=2))
        a = np.atleast_1d(np.loadtxt(paths[1], delimiter=",", ndmin=1))
        return Restriction(A, a)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read restriction files {paths}: {exc}") from exc


_TEST_HEADER = ["variant", "a", "statistic", "df", "p_value", "converged"]


def cmd_test(args):
    data = _load(args)
    tsh = not args.time_het
    kw = dict(tsh=tsh, centered=args.centered_opg)
    if args.restriction:
        R = _read_restriction(args.restriction)
        dim = 2 + (1 if tsh else data.T - 1) + (args.model == "re")
        if R.A.shape[1] != dim:
            raise UsageError(f"restriction needs {dim} columns for this model, got {R.A.shape[1]}")
        unit = _fixes_unit_root(R)
        res = (qlm1_test if unit else qlm_test)(data, args.model, R.A, R.a, **kw)
    elif args.h0_rho == 1.0:
        res = qlm1_test(data, args.model, None, 1.0, **kw)
    else:
        res = qlm_test(data, args.model, None, args.h0_rho, **kw)
    row = res.as_row()
    _emit(_rows_csv(_TEST_HEADER + ["rejects"],
                    [[row[k] for k in _TEST_HEADER] + [res.rejects(args.level)]]), args.out)


def cmd_confset(args):
    data = _load(args)
    cs = confidence_set(data, args.model, args.level, args.grid, tsh=not args.time_het,
                        centered=args.centered_opg)
    lines = [f"# level {cs.level:g}, {cs.grid.size} grid points, "
             f"{int(cs.accepted.sum())} accepted, {len(cs.failures)} failed fits",
             "lower,upper"]
    lines += [f"{lo:.10g},{hi:.10g}" for lo, hi in cs.intervals]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_gmm_ar(args):
    data = _load(args)
    res = gmm_ar_test(data, args.h0_rho, centered=not args.uncentered)
    row = res.as_row()
    _emit(_rows_csv(_TEST_HEADER, [[row[k] for k in _TEST_HEADER]]), args.out)


def cmd_power(args):
    if args.T < 4:
        raise UsageError("power curves need T >= 4")
    if np.any(args.e_grid < 0):
        raise UsageError("local alternatives e must be nonnegative")
    pc = power_curve(args.T, args.e_grid, args.variant, args.level)
    _emit(_rows_csv(["e", "delta", "df", "power"], pc.rows()), args.out)


def cmd_verify(args):
    lo, hi = args.t_range
    if lo > hi or lo < 2:
        raise UsageError("--t-range needs 2 <= LO <= HI")
    checks = verify_constants(lo, hi)
    rows = [[c.name, c.T, "PASS" if c.passed else "FAIL", c.detail] for c in checks]
    _emit(_rows_csv(["check", "T", "status", "detail"], rows), args.out)
    return 0 if all(c.passed for c in checks) else 1


def cmd_mc(args):
    from dataclasses import replace
    try:
        spec = read_spec(Path(args.spec).read_text()) if args.spec else preset(args.preset)
    except OSError as exc:
        raise UsageError(f"cannot read spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    if args.replications is not None:
        spec = replace(spec, replications=args.replications)
    res = run(spec, jobs=args.jobs)
    _emit(emit_table(res, args.layout), args.out)
    if args.manifest:
        write_manifest(res, args.manifest)
    return 1 if any(c.flagged for c in res.cells) else 0


_COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "test": cmd_test,
             "confset": cmd_confset, "gmm-ar": cmd_gmm_ar, "power": cmd_power,
             "verify": cmd_verify, "mc": cmd_mc}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = _COMMANDS[args.command](args)
    except (FitError, InadmissibleParameterError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if code is None else int(code)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
