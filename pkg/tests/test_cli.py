import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from screenopt.cli import ConfigError, main, parse_config, reference_text, threshold_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[screen]
r = 200
n = 40000
v = 3
[fluorescence]
target_mean = 0.4
[curve]
alpha_min = -1
alpha_max = 3
alpha_step = 0.1
replicates = 0
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_curve_baseline_approx_only(tmp_path):
    cfg = write(tmp_path, BASE)
    out = tmp_path / "curve.csv"
    assert main(["curve", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 41
    assert list(rows[0]) == ["threshold", "pdisc_approx", "pdisc_sim", "ci_low", "ci_high",
                             "degenerate_flag"]
    assert all(r["pdisc_sim"] == "" for r in rows)
    best = max(rows, key=lambda r: float(r["pdisc_approx"]))
    assert abs(float(best["threshold"]) - 0.8) <= 0.15
    raw = out.read_bytes()
    assert b"\r\n" not in raw


def test_curve_roundtrip_and_format(tmp_path):
    cfg = write(tmp_path, BASE.replace("replicates = 0", "replicates = 50"))
    out = tmp_path / "c.csv"
    assert main(["curve", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    for row in read_csv(out):
        for k, v in row.items():
            if v and k != "degenerate_flag":
                assert repr(float(v)) == v or f"{float(v):.6f}" == v
        lo, p, hi = (float(row[k]) for k in ("ci_low", "pdisc_sim", "ci_high"))
        assert lo <= p <= hi


def test_curve_rerun_byte_identical(tmp_path):
    cfg = write(tmp_path, BASE.replace("replicates = 0", "replicates = 30"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["curve", "--config", str(cfg), "--out", str(a), "--seed", "7"])
    main(["curve", "--config", str(cfg), "--out", str(b), "--seed", "7"])
    assert a.read_bytes() == b.read_bytes()


def test_curve_sweep_files(tmp_path):
    text = BASE + "sweep = v\nsweep_values = 1, 3\n"
    out = tmp_path / "s.csv"
    assert main(["curve", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    f1, f3 = tmp_path / "s_v=1.csv", tmp_path / "s_v=3.csv"
    p1 = [float(r["pdisc_approx"]) for r in read_csv(f1)]
    p3 = [float(r["pdisc_approx"]) for r in read_csv(f3)]
    assert all(b >= a for a, b in zip(p1, p3))


def test_curve_sweep_target_mean(tmp_path):
    text = BASE + "sweep = target_mean\nsweep_values = 0.2, 0.6\n"
    out = tmp_path / "m.csv"
    assert main(["curve", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    lo = max(float(r["pdisc_approx"]) for r in read_csv(tmp_path / "m_target_mean=0.2.csv"))
    hi = max(float(r["pdisc_approx"]) for r in read_csv(tmp_path / "m_target_mean=0.6.csv"))
    assert hi > lo


def test_unknown_key_is_line_anchored(tmp_path, capsys):
    cfg = write(tmp_path, BASE.replace("v = 3", "v = 3\nlamda = 0.5"))
    assert main(["curve", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:6:" in err and "lamda" in err
    assert not (tmp_path / "x.csv").exists()


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[screne]\nr = 3\n")


def test_bad_value(tmp_path):
    with pytest.raises(ConfigError, match=r":3: bad value for screen.n"):
        parse_config("[screen]\nr = 20\nn = many\n")


def test_semantic_validation():
    with pytest.raises(ConfigError, match="v must be"):
        parse_config("[screen]\nr = 5\nv = 9\n")


def test_empty_grid():
    with pytest.raises(ConfigError, match="empty beta grid"):
        threshold_grid(1.0, 0.0, 0.1, "beta")
    assert len(threshold_grid(-1, 3, 0.1)) == 41


def test_compare_stages_empty_beta_grid(tmp_path, capsys):
    text = (CONFIGS / "two_stage.ini").read_text().replace("beta_max = 3", "beta_max = -2")
    rc = main(["compare-stages", "--config", str(write(tmp_path, text)),
               "--out", str(tmp_path / "o.csv")])
    assert rc == 2
    assert "empty beta grid" in capsys.readouterr().err


def test_optimize_baseline_json(tmp_path):
    out = tmp_path / "o.json"
    assert main(["optimize", "--config", str(CONFIGS / "single_stage.ini"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert list(rep)[:5] == ["command", "stage", "alpha_star", "beta_star", "value"]
    assert abs(rep["alpha_star"] - 0.8) <= 0.15
    assert rep["beta_star"] is None and rep["search_trace"]


def test_optimize_low_shift_two_stage(tmp_path):
    out = tmp_path / "o.json"
    assert main(["optimize", "--config", str(CONFIGS / "two_stage.ini"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["alpha_star"] == pytest.approx(0.5533, abs=1e-3)
    assert rep["constraint"]["L"] == 4
    assert rep["constraint"]["expected_w1"] == pytest.approx(10.0)
    assert rep["constraint_active"]


def test_optimize_no_signal(tmp_path):
    text = BASE.replace("target_mean = 0.4", "target_mean = 0.0")
    out = tmp_path / "o.json"
    assert main(["optimize", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["value"] == pytest.approx(3 / 200, abs=1e-6)
    assert "no-signal" in rep["flags"]


def test_optimize_infeasible(tmp_path):
    text = (CONFIGS / "two_stage.ini").read_text().replace("b = 10\n\n[compare", "b = 100\n\n[compare")
    out = tmp_path / "o.json"
    rc = main(["optimize", "--config", str(write(tmp_path, text)), "--out", str(out)])
    assert rc != 0
    assert json.loads(out.read_text())["error"]["type"] == "infeasible_constraint"


def test_simulate_json(tmp_path, capsys):
    assert main(["simulate", "--config", str(CONFIGS / "single_stage.ini"), "--replicates", "500"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["replicates"] == 500
    assert rep["ci_low"] <= rep["estimate"] <= rep["ci_high"]
    assert abs(rep["estimate"] - rep["pdisc_approx"]) < 0.08


def test_compare_stages(tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["compare-stages", "--config", str(CONFIGS / "two_stage.ini"), "--out", str(out)]) == 0
    rows = read_csv(out)
    single = [float(r["pdisc_approx"]) for r in rows if r["stage"] == "single"]
    two = [float(r["pdisc_approx"]) for r in rows if r["stage"] == "two"]
    assert len(single) == 81 and len(two) == 81
    assert max(two) > max(single)
    assert {r["alpha_fixed"] for r in rows if r["stage"] == "two"} != {""}


def test_reference_lists_every_key():
    text = reference_text()
    for key in ("lambda", "capacity", "sweep_values", "w1_mode", "beta_step"):
        assert f"`{key}`" in text


def test_console_script_and_thread_env(tmp_path):
    cfg = write(tmp_path, BASE.replace("replicates = 0", "replicates = 200")
                .replace("alpha_step = 0.1", "alpha_step = 0.5"))
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"t{threads}.csv"
        env = dict(os.environ, SCREENOPT_THREADS=threads)
        subprocess.run([sys.executable, "-m", "screenopt.cli", "curve", "--config", str(cfg),
                        "--out", str(out), "--seed", "3"], check=True, env=env)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_missing_out_for_csv(tmp_path):
    assert main(["curve", "--config", str(write(tmp_path, BASE))]) == 2
