import json
import math

import numpy as np
import pytest

from fracks.cli import main
from fracks.diagnostics import DiagnosticsRecord
from fracks.scenario import (
    PRESETS,
    ConfigError,
    export_timeseries,
    parse_config,
    read_timeseries,
    run_scenario,
)
from fracks.spectral import read_snapshot, semigroup_apply
from fracks.scenario import build_initial


def write_config(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


BASE = """\
system: {d: 2, alpha: 1.8, beta: 2.0, chi: 1.0, gamma: 0.5, tau: 1.0}
exponents: {p: 1.5, r: 4.0}
grid: {n: 32, L: 8.0}
time: {T: 0.5, M: 5}
initial:
  rho: {profile: gaussian, mass: 0.1, width: 0.8}
  c: {profile: gaussian, mass: 0.1, width: 1.0}
seed: 7
"""


def test_classical_preset():
    cfg = parse_config(preset_name="classical-2d")
    s = cfg.system
    assert (s.d, s.alpha, s.beta) == (2, 2.0, 2.0)
    e = cfg.exponents
    assert (e.p, e.r) == (1.5, 3.0)
    assert abs(e.p1 - 1) < 1e-12 and abs(e.p2 - 2) < 1e-12 and abs(e.sigma - 1 / 3) < 1e-12


@pytest.mark.parametrize("name", ["corollary-α1.8", "corollary-alpha1.8"])
def test_corollary_preset(name):
    e = parse_config(preset_name=name).exponents
    assert (e.p, e.r) == (2.0, 3.0)
    assert abs(e.p1 - 1.25) < 1e-12 and abs(e.p2 - 2.5) < 1e-12


def test_unknown_preset():
    with pytest.raises(ConfigError):
        parse_config(preset_name="nope")


def test_missing_tau_names_the_excluded_case(tmp_path):
    p = write_config(tmp_path, BASE.replace(", tau: 1.0", ""))
    with pytest.raises(ConfigError, match="parabolic-elliptic"):
        parse_config(p)


def test_malformed_yaml_is_position_annotated(tmp_path):
    p = write_config(tmp_path, BASE + "grid: {n: 32, L: [\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(p)
    assert f"{p}:" in str(exc.value) and "malformed" in str(exc.value)


def test_inconsistent_field_is_named(tmp_path):
    p = write_config(tmp_path, BASE.replace("n: 32", "n: 30"))
    with pytest.raises(ConfigError, match="grid"):
        parse_config(p)
    p = write_config(tmp_path, BASE.replace("alpha: 1.8", "alpha: fast"))
    with pytest.raises(ConfigError, match="system.alpha"):
        parse_config(p)


def test_overrides_and_seed(tmp_path):
    p = write_config(tmp_path, BASE)
    cfg = parse_config(p, overrides=["grid.n=64", "system.gamma=0"], seed=3)
    assert cfg.grid.n == 64 and cfg.system.gamma == 0.0 and cfg.seed == 3
    with pytest.raises(ConfigError):
        parse_config(p, overrides=["grid.n"])


def test_auto_exponents(tmp_path):
    p = write_config(tmp_path, BASE.replace("exponents: {p: 1.5, r: 4.0}", "exponents: auto"))
    cfg = parse_config(p)
    assert cfg.exponents.accepted and 0 < cfg.exponents.sigma < 1


def test_outside_theory_is_flagged_but_runs(tmp_path):
    p = write_config(tmp_path, BASE.replace("{p: 1.5, r: 4.0}", "{p: 1.2, r: 1.3}"))
    cfg = parse_config(p)
    assert cfg.outside_theory
    res = run_scenario(cfg, tmp_path / "out")
    assert res.summary["outside_theory"] is True
    assert res.status in (0, 1)


def make_record(n):
    t = np.linspace(0, 1, n) + 1 / 3
    return DiagnosticsRecord(t, {"t": t, "mass_rho": np.sqrt(t), "x": t / 7}, 0.3, 1.5, 3.0)


def test_timeseries_round_trip(tmp_path):
    rec = make_record(5)
    path = export_timeseries(rec, tmp_path / "d.csv")
    back = read_timeseries(path)
    for k, v in rec.columns.items():
        assert np.array_equal(back[k], v)


def test_one_row_record_gives_two_lines(tmp_path):
    path = export_timeseries(make_record(1), tmp_path / "d.csv")
    assert len(path.read_text().splitlines()) == 2


def test_zero_preset_passes_vacuously(tmp_path):
    res = run_scenario(parse_config(preset_name="zero-data"), tmp_path / "z")
    assert res.status == 0
    assert all(c["passed"] for c in res.summary["checks"].values())
    for name in ("diagnostics.csv", "summary.json", "picard_report.json", "timeseries.png", "rho_final.png"):
        assert (res.out_dir / name).exists()


def test_decoupled_run_matches_semigroup(tmp_path):
    p = write_config(tmp_path, BASE.replace("chi: 1.0", "chi: 0.0"))
    cfg = parse_config(p)
    res = run_scenario(cfg, tmp_path / "d")
    assert res.status == 0
    rho0 = build_initial(cfg.rho0, cfg.grid, np.random.default_rng(cfg.seed))
    last, t, _ = read_snapshot(res.out_dir / "snapshots" / f"rho_{cfg.M - 1:04d}")
    assert np.max(np.abs(last.values - semigroup_apply(rho0, 1.8, t).values)) < 1e-14


def test_runs_are_deterministic(tmp_path):
    p = write_config(tmp_path, BASE.replace("profile: gaussian, mass: 0.1, width: 0.8",
                                            "profile: random_bumps, mass: 0.1, width: 0.8"))
    a = run_scenario(parse_config(p), tmp_path / "a")
    b = run_scenario(parse_config(p), tmp_path / "b")
    assert (a.out_dir / "diagnostics.csv").read_bytes() == (b.out_dir / "diagnostics.csv").read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["feasibility", "check", "--d", "2", "--alpha", "2", "--beta", "2", "--p", "1.5", "--r", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert math.isclose(out["sigma"], 1 / 3)
    bad = write_config(tmp_path, "system: [1, 2")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert main(["simulate", "--preset", "nope"]) == 3


def test_cli_solver_failure_writes_report(tmp_path):
    p = write_config(tmp_path, BASE)
    code = main(["picard", "--config", str(p), "--out", str(tmp_path / "f"),
                 "--override", "time.max_iter=1", "--override", "time.tol=1e-30"])
    assert code == 2
    rep = json.loads((tmp_path / "f" / "picard_report.json").read_text())
    assert rep["converged"] is False
    assert json.loads((tmp_path / "f" / "summary.json").read_text())["status"] == "solver_failure"


def test_cli_kernel_and_scan(tmp_path):
    csv_path = tmp_path / "k.csv"
    assert main(["kernel", "--alpha", "2", "--p", "inf", "--n", "64", "--L", "8",
                 "--t", "0.5", "1.0", "--out", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,p,norm,theoretical_exponent" and len(lines) == 3
    scan = tmp_path / "scan.csv"
    assert main(["feasibility", "scan", "--d", "2", "--alpha", "1.8", "--beta", "2",
                 "--resolution", "8", "--out", str(scan)]) == 0
    assert scan.exists() and scan.with_suffix(".png").exists()


def test_cli_diagnose_and_batch(tmp_path, capsys):
    p1 = write_config(tmp_path, BASE, "one.yaml")
    p2 = write_config(tmp_path, BASE.replace("gamma: 0.5", "gamma: 0.0"), "two.yaml")
    assert main(["batch", str(p1), str(p2), "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert main(["diagnose", str(tmp_path / "b" / "one")]) == 0
    assert (tmp_path / "b" / "one" / "diagnostics_recomputed.csv").exists()
    a = read_timeseries(tmp_path / "b" / "one" / "diagnostics.csv")
    b = read_timeseries(tmp_path / "b" / "one" / "diagnostics_recomputed.csv")
    assert np.allclose(a["mass_rho"], b["mass_rho"], rtol=1e-15)


def test_presets_all_parse():
    for name in PRESETS:
        assert parse_config(preset_name=name).grid.n >= 32
