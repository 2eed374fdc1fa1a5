"""Scenario configuration, presets and run orchestration.

A scenario is a YAML mapping with the sections ``system``, ``exponents``,
``grid``, ``time``, ``initial`` and ``outputs`` plus an integer ``seed``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import plotting
from .diagnostics import (
    DiagnosticsRecord,
    build_record,
    chemical_mass_closed_form,
    decay_envelope_check,
    positivity_report,
)
from .feasibility import ExponentProfile, best_profile, build_profile
from .mild import PicardReport, SolverDivergence, TimeGrid, Trajectory, etd_solve, picard_solve
from .spectral import Field, Grid, SystemParams, VectorField, integrate, read_snapshot, write_snapshot

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3

MASS_RTOL = 1e-10
CHEM_MASS_RTOL = 1e-6
POSITIVITY_RTOL = 1e-8


class ConfigError(ValueError):
    """Malformed or inconsistent scenario; ``where`` is 'file:line:col' when known."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def _base(system: dict, exponents, n: int, L: float, T: float, M: int, rho: dict, c: dict) -> dict:
    return {
        "system": system,
        "exponents": exponents,
        "grid": {"n": n, "L": L},
        "time": {"T": T, "M": M, "rule": "uniform", "solver": "picard", "tol": 1e-12, "max_iter": 50},
        "initial": {"rho": rho, "c": c},
        "outputs": {"dir": None, "cadence": 1, "figures": True, "snapshots": True},
        "seed": 0,
    }


_SMALL_RHO = {"profile": "gaussian", "mass": 0.1, "width": 0.5}
_SMALL_C = {"profile": "gaussian", "mass": 0.1, "width": 0.7}

PRESETS: dict[str, dict] = {
    "classical-2d": _base({"d": 2, "alpha": 2.0, "beta": 2.0, "chi": 1.0, "gamma": 0.0, "tau": 1.0},
                          {"p": 1.5, "r": 3.0}, 128, 8.0, 1.0, 33, _SMALL_RHO, _SMALL_C),
    "corollary-α1.8": _base({"d": 2, "alpha": 1.8, "beta": 1.8, "chi": 1.0, "gamma": 0.0, "tau": 1.0},
                            {"p": 2.0, "r": 3.0}, 64, 8.0, 1.0, 33, _SMALL_RHO, _SMALL_C),
    "small-data-2d": _base({"d": 2, "alpha": 1.8, "beta": 2.0, "chi": 1.0, "gamma": 0.5, "tau": 1.0},
                           {"p": 1.5, "r": 4.0}, 128, 8.0, 1.0, 33, _SMALL_RHO, _SMALL_C),
    "zero-data": _base({"d": 2, "alpha": 1.8, "beta": 2.0, "chi": 1.0, "gamma": 0.5, "tau": 1.0},
                       {"p": 1.5, "r": 4.0}, 32, 8.0, 1.0, 9, {"profile": "zero"}, {"profile": "zero"}),
    "heat-decay-2d": _base({"d": 2, "alpha": 2.0, "beta": 2.0, "chi": 0.0, "gamma": 0.0, "tau": 1.0},
                           {"p": 1.5, "r": 3.0}, 64, 8.0, 1.0, 17, _SMALL_RHO, {"profile": "zero"}),
}
PRESET_ALIASES = {"corollary-alpha1.8": "corollary-α1.8"}


def preset(name: str) -> dict:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS) + sorted(PRESET_ALIASES)}")
    return copy.deepcopy(PRESETS[key])


# parsing

def _marks(node, prefix=(), out=None) -> dict:
    """Map dotted key paths of a composed YAML tree to 'line:col' positions."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[".".join(path)] = f"{v.start_mark.line + 1}:{v.start_mark.column + 1}"
            _marks(v, path, out)
    return out


def load_yaml(path) -> tuple[dict, dict]:
    """Raw mapping and key positions; syntax errors carry line and column."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        m = exc.problem_mark
        where = f"{path}:{m.line + 1}:{m.column + 1}" if m else str(path)
        raise ConfigError(f"malformed YAML: {exc.problem}", where) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", str(path))
    return data, {k: f"{path}:{v}" for k, v in _marks(node).items()}


def apply_override(raw: dict, item: str) -> None:
    """Set a dotted key from 'key=value'; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    try:
        node[parts[-1]] = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: unparsable value ({exc})") from None


@dataclass
class InitialSpec:
    profile: str
    mass: float = 0.0
    width: float = 1.0
    center: tuple[float, ...] = ()
    count: int = 3
    path: str | None = None


@dataclass
class ScenarioConfig:
    system: SystemParams
    exponents: ExponentProfile
    grid: Grid
    T: float
    M: int
    rule: str
    solver: str
    dt: float | None
    tol: float
    max_iter: int
    rho0: InitialSpec
    c0: InitialSpec
    out_dir: Path | None
    cadence: int
    figures: bool
    snapshots: bool
    seed: int
    outside_theory: bool
    source: str = "<dict>"
    raw: dict = field(default_factory=dict)


def _get(raw: dict, key: str, where: dict, required: bool = True, default=None):
    node = raw
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            if required:
                parent = key.rsplit(".", 1)[0] if "." in key else ""
                raise ConfigError(f"missing required field {key!r}", where.get(parent))
            return default
        node = node[p]
    return node


def _num(raw, key, where, kind=float, required=True, default=None):
    v = _get(raw, key, where, required, default)
    if v is None:
        return None
    try:
        if kind is int and isinstance(v, float) and not v.is_integer():
            raise ValueError
        x = kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"field {key!r} must be a {kind.__name__}, got {v!r}", where.get(key)) from None
    if kind is float and math.isnan(x):
        raise ConfigError(f"field {key!r} is NaN", where.get(key))
    return x


def _initial(raw, key, where) -> InitialSpec:
    spec = _get(raw, key, where)
    if not isinstance(spec, dict):
        raise ConfigError(f"{key!r} must be a mapping", where.get(key))
    if "snapshot" in spec:
        return InitialSpec("snapshot", path=str(spec["snapshot"]))
    prof = spec.get("profile")
    if prof not in ("gaussian", "zero", "random_bumps"):
        raise ConfigError(f"{key}.profile must be gaussian, zero, random_bumps or a snapshot, got {prof!r}",
                          where.get(f"{key}.profile", where.get(key)))
    mass = _num(raw, f"{key}.mass", where, required=False, default=0.0)
    width = _num(raw, f"{key}.width", where, required=False, default=1.0)
    if mass < 0:
        raise ConfigError(f"{key}.mass must be >= 0", where.get(f"{key}.mass"))
    if not width > 0:
        raise ConfigError(f"{key}.width must be positive", where.get(f"{key}.width"))
    center = tuple(float(x) for x in spec.get("center", ()) or ())
    count = _num(raw, f"{key}.count", where, kind=int, required=False, default=3)
    return InitialSpec(prof, mass, width, center, count)


def config_from_dict(raw: dict, where: dict | None = None, source: str = "<dict>") -> ScenarioConfig:
    where = where or {}
    raw = copy.deepcopy(raw)
    sysraw = _get(raw, "system", where)
    if not isinstance(sysraw, dict):
        raise ConfigError("'system' must be a mapping", where.get("system"))
    if sysraw.get("tau") is None:
        raise ConfigError("missing system.tau: the parabolic-elliptic case (tau = 0) is excluded, "
                          "give a positive chemical time constant", where.get("system"))
    try:
        params = SystemParams(
            d=_num(raw, "system.d", where, kind=int),
            alpha=_num(raw, "system.alpha", where),
            beta=_num(raw, "system.beta", where),
            chi=_num(raw, "system.chi", where, required=False, default=1.0),
            gamma=_num(raw, "system.gamma", where, required=False, default=0.0),
            tau=_num(raw, "system.tau", where),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"inconsistent system: {exc}", where.get("system")) from None

    exps_raw = _get(raw, "exponents", where, required=False, default="auto")
    if exps_raw == "auto" or (isinstance(exps_raw, dict) and exps_raw.get("p") == "auto"):
        try:
            exps = best_profile(params)
        except ValueError as exc:
            raise ConfigError(str(exc), where.get("exponents")) from None
        log.info("auto exponents resolved to p=%.6g r=%.6g sigma=%.6g", exps.p, exps.r, exps.sigma)
    elif isinstance(exps_raw, dict):
        p = _num(raw, "exponents.p", where)
        r = _num(raw, "exponents.r", where)
        wp = _num(raw, "exponents.wp", where, required=False)
        if not (p > 1 and r >= p):
            raise ConfigError(f"exponents need 1 < p <= r, got p={p}, r={r}", where.get("exponents"))
        exps = build_profile(params, p, r, wp)
    else:
        raise ConfigError("'exponents' must be 'auto' or a mapping with p, r", where.get("exponents"))

    try:
        grid = Grid(params.d, _num(raw, "grid.n", where, kind=int), _num(raw, "grid.L", where))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"inconsistent grid: {exc}", where.get("grid")) from None

    T = _num(raw, "time.T", where)
    if not T > 0:
        raise ConfigError("time.T must be positive", where.get("time.T"))
    M = _num(raw, "time.M", where, kind=int, required=False, default=33)
    if M < 2:
        raise ConfigError("time.M must be >= 2", where.get("time.M"))
    rule = _get(raw, "time.rule", where, required=False, default="uniform")
    if rule not in ("uniform", "graded"):
        raise ConfigError(f"time.rule must be uniform or graded, got {rule!r}", where.get("time.rule"))
    solver = _get(raw, "time.solver", where, required=False, default="picard")
    if solver not in ("picard", "etd"):
        raise ConfigError(f"time.solver must be picard or etd, got {solver!r}", where.get("time.solver"))
    dt = _num(raw, "time.dt", where, required=False)
    if solver == "etd" and not (dt and dt > 0):
        raise ConfigError("the etd solver needs a positive time.dt", where.get("time"))

    out = _get(raw, "outputs", where, required=False, default={}) or {}
    out_dir = out.get("dir")
    cadence = _num(raw, "outputs.cadence", where, kind=int, required=False, default=1)
    if cadence < 1:
        raise ConfigError("outputs.cadence must be >= 1", where.get("outputs.cadence"))

    cfg = ScenarioConfig(
        system=params,
        exponents=exps,
        grid=grid,
        T=T,
        M=M,
        rule=rule,
        solver=solver,
        dt=dt,
        tol=_num(raw, "time.tol", where, required=False, default=1e-12),
        max_iter=_num(raw, "time.max_iter", where, kind=int, required=False, default=50),
        rho0=_initial(raw, "initial.rho", where),
        c0=_initial(raw, "initial.c", where),
        out_dir=Path(out_dir) if out_dir else None,
        cadence=cadence,
        figures=bool(out.get("figures", True)),
        snapshots=bool(out.get("snapshots", True)),
        seed=_num(raw, "seed", where, kind=int, required=False, default=0),
        outside_theory=not exps.accepted,
        source=source,
        raw=raw,
    )
    if cfg.outside_theory:
        log.warning("OUTSIDE THEORY: exponent profile rejected (%s); the run proceeds unguarded",
                    "; ".join(exps.violations))
    log.info("resolved %s: %s grid n=%d L=%g T=%g M=%d solver=%s profile=%s",
             source, params, grid.n, grid.L, T, M, solver, exps.as_dict())
    return cfg


def parse_config(path=None, preset_name: str | None = None, overrides=(), seed: int | None = None) -> ScenarioConfig:
    """Load a YAML scenario (or a preset), apply overrides and validate."""
    if path is None and preset_name is None:
        raise ConfigError("give a config file or a preset name")
    if path is not None:
        raw, where = load_yaml(path)
        source = str(path)
    else:
        raw, where, source = preset(preset_name), {}, f"preset:{preset_name}"
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = int(seed)
    return config_from_dict(raw, where, source)


# initial data

def _gaussian(grid: Grid, mass: float, width: float, center) -> np.ndarray:
    c = list(center) + [0.0] * (grid.d - len(center))
    r2 = sum((x - c0) ** 2 for x, c0 in zip(grid.coords, c))
    g = np.broadcast_to(np.exp(-r2 / (2.0 * width**2)), grid.shape)
    return mass * g / (grid.cell_volume * g.sum())


def build_initial(spec: InitialSpec, grid: Grid, rng: np.random.Generator) -> Field:
    if spec.profile == "zero":
        return grid.zeros()
    if spec.profile == "gaussian":
        return Field(grid, _gaussian(grid, spec.mass, spec.width, spec.center))
    if spec.profile == "random_bumps":
        total = np.zeros(grid.shape)
        w = rng.uniform(0.5, 1.5, size=spec.count)
        for wi in w:
            ctr = rng.uniform(-0.25 * grid.L, 0.25 * grid.L, size=grid.d)
            total += wi * _gaussian(grid, 1.0, spec.width, ctr)
        return Field(grid, spec.mass * total / (grid.cell_volume * total.sum()))
    f, _, _ = read_snapshot(spec.path)
    if f.grid != grid:
        raise ConfigError(f"snapshot {spec.path} lives on {f.grid}, not on {grid}")
    return f


# persistence

def export_timeseries(record: DiagnosticsRecord, path) -> Path:
    """CSV with the record's column order; floats at 17 significant digits."""
    if len(record) == 0:
        raise ValueError("empty record")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(record.header)
        for i in range(len(record)):
            w.writerow([format(float(record.columns[k][i]), ".17g") for k in record.header])
    return path


def read_timeseries(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {k: np.array([float(r[i]) for r in body]) for i, k in enumerate(header)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def write_trajectory(traj: Trajectory, out: Path, cadence: int = 1) -> None:
    idx = list(range(0, len(traj.times), cadence))
    if idx[-1] != len(traj.times) - 1:
        idx.append(len(traj.times) - 1)
    for j in idx:
        t = float(traj.times[j])
        write_snapshot(traj.rho[j], out / f"rho_{j:04d}", t, "rho")
        for i, comp in enumerate(traj.grad_c[j].components):
            write_snapshot(comp, out / f"gradc{i}_{j:04d}", t, f"gradc{i}")
        if traj.c is not None:
            write_snapshot(traj.c[j], out / f"c_{j:04d}", t, "c")


def read_trajectory(snap_dir) -> Trajectory:
    """Rebuild a trajectory from the snapshots written by write_trajectory."""
    snap_dir = Path(snap_dir)
    rho_files = sorted(snap_dir.glob("rho_*.bin"))
    if not rho_files:
        raise FileNotFoundError(f"no snapshots in {snap_dir}")
    times, rho, grads, cs = [], [], [], []
    for f in rho_files:
        tag = f.stem.split("_")[1]
        r, t, _ = read_snapshot(f)
        times.append(t)
        rho.append(r)
        comps = [read_snapshot(snap_dir / f"gradc{i}_{tag}.bin")[0] for i in range(r.grid.d)]
        grads.append(VectorField.from_components(comps))
        cf = snap_dir / f"c_{tag}.bin"
        cs.append(read_snapshot(cf)[0] if cf.exists() else None)
    c = tuple(cs) if all(x is not None for x in cs) else None
    return Trajectory(TimeGrid(tuple(times)), tuple(rho), tuple(grads), c)


# checks

def evaluate_checks(traj: Trajectory, cfg: ScenarioConfig, rho0: Field, c0: Field) -> dict:
    """Conservation, positivity and envelope checks on a finished trajectory, each with value and tolerance."""
    p = cfg.system
    m0 = integrate(rho0)
    cm0 = integrate(c0)
    checks = {}
    masses = np.array([integrate(f) for f in traj.rho])
    dev = float(np.max(np.abs(masses - m0)) / max(abs(m0), 1e-300)) if m0 != 0 else float(np.max(np.abs(masses)))
    checks["mass_conservation"] = {"value": dev, "tol": MASS_RTOL, "passed": dev <= MASS_RTOL}
    if traj.c is not None:
        err = 0.0
        for t, f in zip(traj.times, traj.c):
            cf = chemical_mass_closed_form(m0, cm0, p.gamma, p.tau, float(t))
            err = max(err, abs(integrate(f) - cf) / max(1.0, abs(cf)))
        checks["chemical_mass_law"] = {"value": err, "tol": CHEM_MASS_RTOL, "passed": err <= CHEM_MASS_RTOL}
    if np.all(rho0.values >= 0) and np.all(c0.values >= 0):
        rows = positivity_report(traj, max(2.0, float(cfg.exponents.p)))
        worst = max((r.rho_minus / r.rho_norm if r.rho_norm > 0 else 0.0) for r in rows)
        c_ok = all(r.min_c >= -POSITIVITY_RTOL * max(r.max_c, 0.0) for r in rows) if traj.c is not None else True
        checks["positivity"] = {"value": worst, "tol": POSITIVITY_RTOL,
                                "passed": bool(worst <= POSITIVITY_RTOL and c_ok)}
    if traj.times[-1] > 1.0 and m0 > 0:
        env = decay_envelope_check(traj, cfg.exponents, p, t_min=1.0)
        ratio = max(env.rho_envelope_sup / env.rho_envelope_at_tmin,
                    env.gradc_envelope_sup / env.gradc_envelope_at_tmin if env.gradc_envelope_at_tmin > 0 else 1.0)
        checks["envelope_bounded"] = {"value": ratio, "tol": 1.2, "passed": ratio <= 1.2}
    return checks


# orchestration

@dataclass
class RunResult:
    status: int
    out_dir: Path
    summary: dict


def run_scenario(cfg: ScenarioConfig, out_dir=None, solver: str | None = None) -> RunResult:
    """Solve, diagnose and write every artifact; never raises on solver failure."""
    out = Path(out_dir or cfg.out_dir or "fracks-out")
    out.mkdir(parents=True, exist_ok=True)
    solver = solver or cfg.solver
    rng = np.random.default_rng(cfg.seed)
    rho0 = build_initial(cfg.rho0, cfg.grid, rng)
    c0 = build_initial(cfg.c0, cfg.grid, rng)
    tg = TimeGrid.build(cfg.T, cfg.M, cfg.rule)
    summary = {
        "source": cfg.source,
        "seed": cfg.seed,
        "system": {k: getattr(cfg.system, k) for k in ("d", "alpha", "beta", "chi", "gamma", "tau")},
        "grid": {"n": cfg.grid.n, "L": cfg.grid.L},
        "time": {"T": cfg.T, "M": cfg.M, "rule": cfg.rule, "solver": solver, "dt": cfg.dt},
        "profile": cfg.exponents.as_dict(),
        "feasibility_verdict": "accepted" if cfg.exponents.accepted else "rejected",
        "outside_theory": cfg.outside_theory,
    }
    report: PicardReport | None = None
    try:
        if solver == "picard":
            traj, report = picard_solve(rho0, c0, cfg.system, cfg.exponents, tg, tol=cfg.tol,
                                        max_iter=cfg.max_iter, allow_outside_theory=True)
        else:
            dt = cfg.dt or cfg.T / (cfg.M - 1)
            traj = etd_solve(rho0, c0, cfg.system, dt, cfg.T, output_times=tg.array)
    except SolverDivergence as exc:
        summary.update(status="solver_failure", exit_code=EXIT_SOLVER, error=str(exc))
        if solver == "picard":
            PicardReport(exc.index, [], False, math.nan, cfg.tol, float(cfg.exponents.p), str(exc)).to_json(
                out / "picard_report.json")
        _write_json(out / "summary.json", summary)
        return RunResult(EXIT_SOLVER, out, summary)

    if report is not None:
        report.to_json(out / "picard_report.json")
    record = build_record(traj, cfg.exponents, cfg.system)
    export_timeseries(record, out / "diagnostics.csv")
    if cfg.snapshots:
        write_trajectory(traj, out / "snapshots", cfg.cadence)
    checks = evaluate_checks(traj, cfg, rho0, c0)
    if cfg.figures:
        plotting.plot_timeseries(record, out / "timeseries.png")
        plotting.plot_field(traj.rho[-1], out / "rho_final.png", f"rho at t={traj.times[-1]:g}")
    status = EXIT_OK
    if report is not None and not report.converged:
        status = EXIT_SOLVER
        summary["error"] = report.message
    elif not all(c["passed"] for c in checks.values()):
        status = EXIT_CHECK_FAILED
    summary.update(checks=checks, exit_code=status,
                   status={EXIT_OK: "pass", EXIT_CHECK_FAILED: "check_failed", EXIT_SOLVER: "solver_failure"}[status])
    _write_json(out / "summary.json", summary)
    return RunResult(status, out, summary)


def diagnose_run(run_dir, figures: bool = True) -> dict:
    """Recompute diagnostics of a finished run from its snapshots and summary."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    s = summary["system"]
    params = SystemParams(int(s["d"]), s["alpha"], s["beta"], s["chi"], s["gamma"], s["tau"])
    pr = summary["profile"]
    exps = ExponentProfile(pr["p"], pr["r"], pr["wp"], pr["sigma"], pr["p1"], pr["p2"], pr["case"],
                           pr["accepted"], tuple(pr["violations"]))
    traj = read_trajectory(run_dir / "snapshots")
    record = build_record(traj, exps, params)
    export_timeseries(record, run_dir / "diagnostics_recomputed.csv")
    if figures:
        plotting.plot_timeseries(record, run_dir / "timeseries_recomputed.png")
    out = {"nodes": len(record), "profile": pr, "outside_theory": summary.get("outside_theory", False)}
    if traj.times[-1] >= 1.0:
        env = decay_envelope_check(traj, exps, params, t_min=1.0)
        out["envelope"] = env.__dict__
    _write_json(run_dir / "diagnose.json", out)
    return out
