"""Driver tests: every subcommand, output schemas, determinism, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from batskit.cli import main
from batskit.degreeopt import optimize_p1
from batskit.netsim import line_topology
from batskit.rankdist import line_rank_dist


def _run(tmp_path, command, cfg, seed=0, trials=None, out_name="out"):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_path = tmp_path / out_name
    argv = [command, "--config", str(cfg_path), "--seed", str(seed),
            "--out", str(out_path)]
    if trials is not None:
        argv += ["--trials", str(trials)]
    rc = main(argv)
    assert rc == 0
    return out_path


def _csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


# -- analyze -----------------------------------------------------------------

def test_analyze_two_hop_line(tmp_path):
    cfg = {"M": 16, "q": 256, "hops": [0.2, 0.1]}
    out = _run(tmp_path, "analyze", cfg)
    rep = json.loads(out.read_text())
    assert rep["schema"] == 1
    assert len(rep["h"]) == 17 and len(rep["hbar"]) == 16
    assert rep["sum_r_hbar"] == pytest.approx(12.57, abs=0.02)
    assert rep["sum_r_h"] >= rep["sum_r_hbar"]
    assert rep["expected_rank"] == pytest.approx(rep["sum_r_h"])


def test_analyze_sweep_csv(tmp_path):
    cfg = {"M": 8, "q": 256, "hops": [0.1],
           "sweep": {"T": 64, "k": 2, "eps": 0.1, "Ms": [2, 4, 8, 16]}}
    out = _run(tmp_path, "analyze", cfg)
    rep = json.loads(out.read_text())
    assert rep["sweep_best_M"] in (2, 4, 8, 16)
    header, rows = _csv_rows((tmp_path / "out.csv").read_text())
    assert header == ["M", "k", "normalized_rate"]
    assert len(rows) == 4
    best = max(rows, key=lambda r: float(r[2]))
    assert int(best[0]) == rep["sweep_best_M"]


# -- optimize ----------------------------------------------------------------

def test_optimize_p1_zero_rank(tmp_path):
    # a channel that never delivers rank cannot support any theta
    h = {"M": 4, "h": [1.0, 0.0, 0.0, 0.0, 0.0]}
    cfg = {"q": 256, "eta": 0.05, "h": h, "problem": "p1",
           "grid_points": 40}
    rep = json.loads(_run(tmp_path, "optimize", cfg).read_text())
    assert rep["value"] == pytest.approx(0.0, abs=1e-9)
    assert "theta_lower_bound" in rep and "theta_upper_bound" in rep


def test_optimize_p2_singleton_matches_p1(tmp_path):
    h = line_rank_dist(8, [0.2], 256)
    hd = h.to_json_dict()
    base = {"q": 256, "eta": 0.05, "grid_points": 60}
    p1 = json.loads(_run(tmp_path, "optimize",
                         dict(base, problem="p1", h=hd)).read_text())
    p2 = json.loads(_run(tmp_path, "optimize",
                         dict(base, problem="p2", ranks=[hd]),
                         out_name="out2").read_text())
    assert p2["value"] == pytest.approx(p1["value"], rel=1e-6)
    assert p1["feasibility_margin"] > -1e-7


def test_optimize_p3_reports_per_node(tmp_path):
    hs = [line_rank_dist(8, [e], 256).to_json_dict() for e in (0.1, 0.3)]
    cfg = {"q": 256, "eta": 0.05, "problem": "p3", "ranks": hs,
           "grid_points": 60}
    rep = json.loads(_run(tmp_path, "optimize", cfg).read_text())
    assert len(rep["per_node"]) == 2
    assert min(rep["per_node"]) >= rep["value"] - 1e-7


# -- evolve ------------------------------------------------------------------

def test_evolve_zero_theta_never_crosses(tmp_path):
    h = line_rank_dist(8, [0.2], 256)
    psi = optimize_p1(h, 256, 0.05).psi
    cfg = {"psi": psi.to_json_dict(), "h": h.to_json_dict(), "q": 256,
           "theta": 0.0, "grid_points": 200, "eta": 0.05}
    text = _run(tmp_path, "evolve", cfg).read_text()
    header, rows = _csv_rows(text)
    assert header == ["x", "rho0"]
    assert len(rows) == 200
    assert all(float(r[1]) >= -1e-12 for r in rows)
    assert "# crossing=None" in text


def test_evolve_large_theta_crosses(tmp_path):
    h = line_rank_dist(8, [0.2], 256)
    res = optimize_p1(h, 256, 0.05)
    cfg = {"psi": res.psi.to_json_dict(), "h": h.to_json_dict(), "q": 256,
           "theta": 3.0 * res.value, "grid_points": 400, "eta": 0.05}
    text = _run(tmp_path, "evolve", cfg).read_text()
    crossing = text.strip().splitlines()[-1].split("=", 1)[1]
    assert crossing != "None"
    assert 0.0 < float(crossing) < 0.95


# -- simulate ----------------------------------------------------------------

def _sim_cfg(n=20):
    top = line_topology([0.2, 0.1]).to_json_dict()
    return {"topology": top,
            "scheme": {"tag": "Line", "M": 8, "q": 256, "n": n}}


def test_simulate_trace_schema(tmp_path):
    out = _run(tmp_path, "simulate", _sim_cfg(), seed=3)
    text = out.read_text()
    assert text.startswith("# config=")
    header, rows = _csv_rows(text)
    assert header == ["batch_id", "destination", "columns", "rank"]
    assert len(rows) == 20
    ids = [int(r[0]) for r in rows]
    assert ids == sorted(ids)
    for r in rows:
        assert r[1] == "t"
        assert 0 <= int(r[3]) <= min(8, int(r[2]))


def test_simulate_rerun_identical(tmp_path):
    a = _run(tmp_path, "simulate", _sim_cfg(), seed=5).read_bytes()
    b = _run(tmp_path, "simulate", _sim_cfg(), seed=5,
             out_name="out2").read_bytes()
    c = _run(tmp_path, "simulate", _sim_cfg(), seed=6,
             out_name="out3").read_bytes()
    assert a == b
    assert a != c


# -- endtoend ----------------------------------------------------------------

def _e2e_cfg():
    h = line_rank_dist(8, [0.0], 256)
    psi = optimize_p1(h, 256, 0.05).psi
    return {
        "k_prime": 49, "T": 2,
        "scheme": {"tag": "Line", "M": 8, "q": 256},
        "topology": line_topology([0.0]).to_json_dict(),
        "precode": {"mode": "systematic-sparse", "rate": 0.98,
                    "row_weight": 20, "seed": 0},
        "psi": psi.to_json_dict(),
        "max_batches": 40,
    }


def test_endtoend_lossless_link(tmp_path):
    rep = json.loads(_run(tmp_path, "endtoend", _e2e_cfg(), seed=1,
                          trials=3).read_text())
    assert rep["trials"] == 3
    assert rep["failures"] == 0
    assert rep["mismatches"] == 0
    # lossless hops: only the final partially consumed batch can leave
    # unused slots, so RO stays below one batch worth
    assert rep["ro"]["max"] < 8
    assert rep["co"]["min"] >= 0
    assert all(r["success"] for r in rep["per_trial"])


def test_endtoend_rerun_identical(tmp_path):
    a = _run(tmp_path, "endtoend", _e2e_cfg(), seed=9,
             trials=2).read_bytes()
    b = _run(tmp_path, "endtoend", _e2e_cfg(), seed=9, trials=2,
             out_name="out2").read_bytes()
    assert a == b


# -- sweep -------------------------------------------------------------------

def test_sweep_schema(tmp_path):
    cfg = {"M": 4, "q": 256, "etas": [0.05, 0.1]}
    out = _run(tmp_path, "sweep", cfg, seed=2, trials=3)
    header, rows = _csv_rows(out.read_text())
    assert header == ["sample", "eta", "theta_hat", "sum_r_hbar",
                      "theta_tilde"]
    assert len(rows) == 6
    for r in rows:
        theta_hat, s_bar, theta_tilde = map(float, r[2:])
        assert 0.0 <= theta_hat <= 4.0
        assert 0.0 <= theta_tilde <= 1.0 + 1e-6


# -- entry point / exit codes ------------------------------------------------

def test_missing_config_exits_2(tmp_path, capsys):
    rc = main(["analyze", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "cannot read config" in capsys.readouterr().err


def test_bad_json_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["analyze", "--config", str(p)]) == 2


def test_bad_problem_exits_2(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"q": 256, "eta": 0.05, "problem": "p9",
                             "hops": [0.1], "M": 4}))
    assert main(["optimize", "--config", str(p)]) == 2
    assert "error" in capsys.readouterr().err


def test_module_invocation(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"M": 4, "q": 256, "hops": [0.1]}))
    proc = subprocess.run(
        [sys.executable, "-m", "batskit.cli", "analyze",
         "--config", str(cfg)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["M"] == 4
