"""Command line entry point: ``fracks <subcommand> ...``.

Exit codes: 0 pass, 1 run finished with a failed check, 2 solver failure,
3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import plotting
from .feasibility import build_profile, check_extra_region, scan_region
from .kernels import kernel_norms, theoretical_norm_exponent, fit_power_law
from .scenario import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    ConfigError,
    diagnose_run,
    parse_config,
    run_scenario,
)
from .spectral import Grid, SystemParams

log = logging.getLogger("fracks")


def _float(s: str) -> float:
    return math.inf if s.lower() in ("inf", "infinity") else float(s)


def _system_args(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--d", type=int, required=True)
    ap.add_argument("--alpha", type=float, required=True)
    ap.add_argument("--beta", type=float, required=True)
    ap.add_argument("--chi", type=float, default=1.0)
    ap.add_argument("--gamma", type=float, default=0.0)
    ap.add_argument("--tau", type=float, default=1.0)


def _run_args(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="YAML scenario file")
    ap.add_argument("--preset", help="named scenario preset")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracks", description="Fractional Keller-Segel toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    fe = sub.add_parser("feasibility", help="exponent admissibility")
    fsub = fe.add_subparsers(dest="action", required=True)
    chk = fsub.add_parser("check", help="classify one (p, r) pair")
    _system_args(chk)
    chk.add_argument("--p", type=_float, required=True)
    chk.add_argument("--r", type=_float, required=True)
    chk.add_argument("--wp", type=_float)
    scan = fsub.add_parser("scan", help="classify a (p, r) lattice")
    _system_args(scan)
    scan.add_argument("--resolution", type=int, default=64)
    scan.add_argument("--out", help="CSV path (PNG written alongside)")

    ke = sub.add_parser("kernel", help="L^p norms of the fractional heat kernel")
    ke.add_argument("--alpha", type=float, required=True)
    ke.add_argument("--p", type=_float, required=True)
    ke.add_argument("--d", type=int, default=2)
    ke.add_argument("--n", type=int, default=256)
    ke.add_argument("--L", type=float, default=16.0)
    ke.add_argument("--t", type=_float, nargs="+", default=[0.4, 0.5, 0.6, 0.7, 0.8, 1.0])
    ke.add_argument("--out", help="CSV path, stdout when omitted")

    for name, hlp in (("simulate", "run a scenario with its configured solver"),
                      ("picard", "run a scenario with Picard iteration")):
        _run_args(sub.add_parser(name, help=hlp))

    dg = sub.add_parser("diagnose", help="recompute diagnostics of a finished run")
    dg.add_argument("run_dir")
    dg.add_argument("--no-figures", action="store_true")

    ba = sub.add_parser("batch", help="run several scenario files in parallel")
    ba.add_argument("configs", nargs="+")
    ba.add_argument("--out", required=True)
    ba.add_argument("--workers", type=int, default=2)
    ba.add_argument("--seed", type=int)
    return ap


def _params(args) -> SystemParams:
    return SystemParams(args.d, args.alpha, args.beta, args.chi, args.gamma, args.tau)


def cmd_feasibility(args) -> int:
    params = _params(args)
    if args.action == "check":
        prof = build_profile(params, args.p, args.r, args.wp)
        out = prof.as_dict()
        if prof.accepted:
            out["extra_region"] = check_extra_region(params, args.p, args.r).accepted
        print(json.dumps(out, indent=2, default=float))
        return EXIT_OK
    samples = scan_region(params, resolution=args.resolution)
    rows = [s.row() for s in samples]
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(samples[0].header())
            w.writerows(rows)
        plotting.plot_region(samples, path.with_suffix(".png"), f"d={params.d} alpha={params.alpha} beta={params.beta}")
    else:
        w = csv.writer(sys.stdout)
        w.writerow(samples[0].header())
        w.writerows(rows)
    n_ok = sum(s.accepted for s in samples)
    log.info("%d of %d samples accepted", n_ok, len(samples))
    return EXIT_OK


def cmd_kernel(args) -> int:
    grid = Grid(args.d, args.n, args.L)
    norms = kernel_norms(args.alpha, args.p, grid, args.t)
    theory = theoretical_norm_exponent(args.alpha, args.p, args.d)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["t", "p", "norm", "theoretical_exponent"])
        for t, v in zip(args.t, norms):
            w.writerow([format(t, ".17g"), args.p, format(v, ".17g"), format(theory, ".17g")])
    finally:
        if args.out:
            fh.close()
    log.info("fitted exponent %.6f, theory %.6f", fit_power_law(args.t, norms), theory)
    return EXIT_OK


def _run(args, solver=None) -> int:
    cfg = parse_config(args.config, args.preset, args.override, args.seed)
    res = run_scenario(cfg, args.out, solver=solver)
    if cfg.outside_theory:
        log.warning("OUTSIDE THEORY run: %s", "; ".join(cfg.exponents.violations))
    log.info("run finished: %s -> %s", res.summary.get("status"), res.out_dir)
    return res.status


def _batch_one(job) -> tuple[str, int]:
    path, out, seed = job
    try:
        cfg = parse_config(path, seed=seed)
        return path, run_scenario(cfg, out).status
    except ConfigError as exc:
        return f"{path}: {exc}", EXIT_CONFIG


def cmd_batch(args) -> int:
    jobs = [(c, str(Path(args.out) / Path(c).stem), args.seed) for c in args.configs]
    worst = EXIT_OK
    with ProcessPoolExecutor(max_workers=args.workers) as ex:
        for name, status in ex.map(_batch_one, jobs):
            log.info("%s -> exit %d", name, status)
            worst = max(worst, status)
    return worst


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "feasibility":
            return cmd_feasibility(args)
        if args.command == "kernel":
            return cmd_kernel(args)
        if args.command == "simulate":
            return _run(args)
        if args.command == "picard":
            return _run(args, solver="picard")
        if args.command == "diagnose":
            out = diagnose_run(args.run_dir, figures=not args.no_figures)
            print(json.dumps(out, indent=2, default=float))
            return EXIT_OK
        if args.command == "batch":
            return cmd_batch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
