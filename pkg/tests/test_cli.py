import json
import math

import numpy as np
import pytest

from kcexclusion.cli import aggregate, main, parse_config, parse_profile, read_aggregate
from kcexclusion.errors import ConfigError
from kcexclusion.simulator import read_trajectory_csv


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def records(capsys):
    out = capsys.readouterr().out
    return [json.loads(line) for line in out.splitlines() if line.strip()]


INTERP = "[model]\nfamily = interpolating\nn = 1\nm = 0.5\nell = 4\n"


def test_verify_gradient_ok(tmp_path, capsys):
    cfg = write(tmp_path, "v.ini", "N = 12\n" + INTERP)
    assert main(["verify-gradient", cfg]) == 0
    rec = records(capsys)[0]
    assert rec["passed"] and rec["max_residual"] <= 1e-10


def test_verify_gradient_fail_prints_witness(tmp_path, capsys):
    cfg = write(tmp_path, "w.ini", "N = 8\n[model]\nspec = windowed(n=1,L=1,weights=0.5:0.6)\n")
    assert main(["verify-gradient", cfg]) == 1
    err = capsys.readouterr().err
    assert "witness:" in err


def test_solve_gradient(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", "N = 12\n[model]\nfamily = bernstein\nn = 1\nL = 2\n")
    assert main(["solve-gradient", cfg]) == 0
    assert records(capsys)[0]["max_residual"] <= 1e-10


def test_diffusivity(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    cfg = write(tmp_path, "d.ini", f"output = {out}\n[model]\nfamily = bernstein\nn = 1\nL = 2\n")
    assert main(["diffusivity", cfg]) == 0
    recs = records(capsys)
    rows = [r for r in recs if "alpha" in r]
    assert len(rows) == 11
    for r in rows:
        a = r["alpha"]
        assert r["exact"] == pytest.approx(2 * a * (1 - a), abs=1e-12)
    assert recs[-1]["max_abs_diff"] <= 1e-12
    assert len(out.read_text().splitlines()) == 12


def test_malformed_config(tmp_path, capsys):
    cfg = write(tmp_path, "bad.ini", "N = 12\nthis line is broken\n")
    assert main(["verify-gradient", cfg]) == 2
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_and_missing_file(tmp_path, capsys):
    cfg = write(tmp_path, "u.ini", "N = 12\nNN = 3\n" + INTERP)
    assert main(["verify-gradient", cfg]) == 2
    assert main(["verify-gradient", str(tmp_path / "nope.ini")]) == 2
    cfg = write(tmp_path, "m.ini", "N = 12\n[model]\nfamily = pmm\nn = 1\nx = 2\n")
    assert main(["verify-gradient", cfg]) == 2
    cfg = write(tmp_path, "s.ini", "N = 5\n[model]\nfamily = pmm\nn = 3\n")
    assert main(["verify-gradient", cfg]) == 2
    assert main(["frobnicate", cfg]) == 2


def test_regime_cluster_assumptions(tmp_path, capsys):
    cfg = write(tmp_path, "r.ini", "[model]\nfamily = pmm\nn = 2\n")
    assert main(["classify-regime", cfg]) == 0
    assert records(capsys)[0]["regime"] == "I"
    cfg = write(tmp_path, "c.ini", "cluster = 110\n[model]\nfamily = pmm\nn = 2\n")
    assert main(["mobile-cluster", cfg]) == 1
    cfg = write(tmp_path, "c2.ini", "cluster = 110\n[model]\nfamily = pmm\nn = 1\n")
    assert main(["mobile-cluster", cfg]) == 0
    assert records(capsys)[-1]["r_star"] == 0.5
    cfg = write(tmp_path, "a.ini", "N_list = 64 256\nell_rule = sqrt\n" + INTERP)
    assert main(["check-assumptions", cfg]) == 0
    recs = records(capsys)
    assert [r["ell"] for r in recs[:2]] == [8, 16]


def test_phi_table(tmp_path, capsys):
    cfg = write(tmp_path, "p.ini", "L = 8\nalpha_points = 5\n[model]\nfamily = pmm\nn = 2\n")
    assert main(["phi-table", cfg]) == 0
    recs = records(capsys)
    assert [r["alpha"] for r in recs] == [0, 0.25, 0.5, 0.75, 1]
    assert recs[2]["phi_L"] == pytest.approx(0.5**3 / 3)


def test_simulate_seed_override_and_aggregate(tmp_path, capsys):
    base = tmp_path / "run"
    text = (f"N = 64\nT = 0.01\nobs_times = 0.005 0.01\neps = 0.125\nrealizations = 2\n"
            f"profile = sine:0.5,0.25,1\nmaster_seed = 1\noutput = {base}\n[model]\nfamily = pmm\nn = 2\n")
    cfg = write(tmp_path, "sim.ini", text)
    assert main(["simulate", cfg, "--seed", "9"]) == 0
    recs = records(capsys)
    assert [r["seed"] for r in recs] == [9, 9]
    first = (tmp_path / "run.r000.csv").read_text()
    assert main(["simulate", cfg, "--seed", "9"]) == 0
    assert (tmp_path / "run.r000.csv").read_text() == first
    capsys.readouterr()
    files = [str(tmp_path / "run.r000.csv"), str(tmp_path / "run.r001.csv")]
    agg_cfg = write(tmp_path, "agg.ini", f"output = {tmp_path / 'agg.csv'}\n")
    assert main(["aggregate", agg_cfg, *files]) == 0
    header, times, mean, err = read_aggregate(tmp_path / "agg.csv")
    mats = [read_trajectory_csv(f)[2] for f in files]
    assert np.allclose(mean, (mats[0] + mats[1]) / 2, atol=1e-15)
    # identical inputs give zero error
    assert main(["aggregate", agg_cfg, files[0], files[0]]) == 0
    assert np.all(read_aggregate(tmp_path / "agg.csv")[3] == 0)


def test_aggregate_grid_mismatch(tmp_path, capsys):
    a = write(tmp_path, "a.csv", "# N = 8\n# box_size = 4\nt,box,density\n0.1,0,0.5\n0.1,1,0.5\n")
    b = write(tmp_path, "b.csv", "# N = 8\n# box_size = 4\nt,box,density\n0.2,0,0.5\n0.2,1,0.5\n")
    cfg = write(tmp_path, "e.ini", "")
    assert main(["aggregate", cfg, a, b]) == 2
    with pytest.raises(ConfigError):
        aggregate([a])


def test_aggregate_constant_copies(tmp_path):
    files = []
    for r in range(4):
        files.append(write(tmp_path, f"c{r}.csv", "# N = 8\n# box_size = 4\nt,box,density\n0.1,0,0.25\n0.1,1,0.25\n"))
    _, _, mean, err = aggregate(files)
    assert np.all(mean == 0.25) and np.all(err == 0)


def test_aggregate_ssep_stderr_scale(tmp_path, capsys):
    base = tmp_path / "ssep"
    cfg = write(tmp_path, "s.ini", f"N = 512\nT = 0.001\neps = 0.03125\nrealizations = 20\n"
                                   f"profile = constant:0.5\noutput = {base}\n[model]\nfamily = ssep\n")
    assert main(["simulate", cfg]) == 0
    files = sorted(str(p) for p in tmp_path.glob("ssep.r*.csv"))
    _, _, _, err = aggregate(files)
    expected = math.sqrt(0.25 / (16 * 20))
    assert expected / 3 <= err.mean() <= 3 * expected


def test_workers_env_matches_serial(tmp_path, capsys, monkeypatch):
    text = "N = 32\nT = 0.01\neps = 0.25\nrealizations = 2\n[model]\nfamily = pmm\nn = 1\n"
    cfg = write(tmp_path, "w.ini", text)
    monkeypatch.setenv("KCX_WORKERS", "1")
    assert main(["simulate", cfg]) == 0
    serial = records(capsys)
    monkeypatch.setenv("KCX_WORKERS", "2")
    assert main(["simulate", cfg]) == 0
    assert records(capsys) == serial


def test_pde_and_compare(tmp_path, capsys):
    out = tmp_path / "pde.csv"
    cfg = write(tmp_path, "pde.ini", f"M = 64\nT = 0.01\nflux = power:3\nprofile = sine:0.5,0.25,1\noutput = {out}\n")
    assert main(["pde", cfg]) == 0
    rec = records(capsys)[0]
    assert rec["mass"] == pytest.approx(0.5, abs=1e-12)
    assert out.exists()
    cfg = write(tmp_path, "cmp.ini", "N = 64\nT = 0.01\neps = 0.125\nrealizations = 2\nM = 64\nflux = phi_L:12\n"
                                     "max_l1 = 0.5\n[model]\nfamily = pmm\nn = 2\n")
    assert main(["compare", cfg]) == 0
    rec = records(capsys)[0]
    assert set(rec) >= {"l1", "pair_const", "pair_sin1", "t"}


def test_profiles():
    assert np.allclose(parse_profile("constant:0.25")(np.zeros(3)), 0.25)
    assert parse_profile("sine:0.5,0.25,1")(np.array([0.25]))[0] == pytest.approx(0.75)
    for bad in ("constant:2", "sine:0.5,0.6,1", "cosine:1", "constant:x", "__import__('os')"):
        with pytest.raises(ConfigError):
            parse_profile(bad)


def test_parse_config_superposition():
    cfg = parse_config("N = 12\n[model]\nfamily = superposition\ncomponents = 0.5*pmm(n=1)+0.5*bernstein(n=1,L=2)\n"
                       "perturbation = 0.01\n", "verify-gradient")
    spec = cfg.model()
    assert spec.family == "superposition" and spec.perturbation == 0.01
