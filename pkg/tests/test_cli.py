import csv
import json
import subprocess
import sys

import pytest
import yaml

from uavfl.cli import run_cli
from uavfl.scenario import load_raw_config, load_scenario


@pytest.fixture
def small_config(tmp_path):
    raw = load_raw_config("paper_default")
    raw["devices"] = {"positions": [[0, 0], [40, 30], [-30, 20], [500, 0], [540, -30], [480, 40]]}
    raw["uav"].update(n_slots=40, start=[250.0, 0.0])
    raw["optimizer"]["max_outer_iters"] = 3
    raw["learning"].update(rounds=2, local_steps=2)
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_optimize_happy_path(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_cli(["optimize", "--config", str(small_config), "--out", str(out)]) == 0
    for name in ("trajectory.csv", "zeta.csv", "trace.csv", "devices.csv", "manifest.json"):
        assert (out / name).is_file()
    assert read_rows(out / "trajectory.csv")[0] == ["n", "x", "y"]
    assert len(read_rows(out / "zeta.csv")) == 41
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "optimize"
    assert manifest["scenario_hash"] == load_scenario(small_config).replace(
        weights=manifest["resolved_config"]["devices"]["weights"]
    ).digest()
    assert manifest["seed"] == 0 and manifest["version"]
    for name in ("trajectory.csv", "trace.csv", "zeta.csv"):
        assert b"\r" not in (out / name).read_bytes()
    assert "rounded objective" in capsys.readouterr().out


def test_optimize_rerun_is_bitwise_identical(small_config, tmp_path):
    for name in ("a", "b"):
        assert run_cli(["optimize", "--config", str(small_config), "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.csv", "zeta.csv", "trace.csv", "devices.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_baseline_and_plot_data(small_config, tmp_path):
    run = tmp_path / "base"
    assert run_cli(["baseline", "--config", str(small_config), "--out", str(run)]) == 0
    rows = read_rows(run / "baselines.csv")
    assert [r[0] for r in rows[1:]] == ["static-ps", "circular"]
    plot = tmp_path / "plot"
    assert run_cli(["plot-data", "--run", str(run), "--out", str(plot)]) == 0
    traj = read_rows(plot / "trajectory_map.csv")
    assert traj[0] == ["source", "n", "x", "y"]
    assert {r[0] for r in traj[1:]} == {"trajectory_circular", "trajectory_static-ps"}
    first = (plot / "trajectory_map.csv").read_bytes()
    assert run_cli(["plot-data", "--run", str(run), "--out", str(plot)]) == 0
    assert (plot / "trajectory_map.csv").read_bytes() == first


def test_simulate_and_accuracy_curves(small_config, tmp_path):
    run = tmp_path / "sim"
    code = run_cli(["simulate", "--config", str(small_config), "--out", str(run), "--schemes", "error-free,static-ps"])
    assert code == 0
    assert (run / "rounds_trial00.csv").is_file() and (run / "summary.csv").is_file()
    plot = tmp_path / "plot"
    assert run_cli(["plot-data", "--run", str(run), "--out", str(plot)]) == 0
    rows = read_rows(plot / "accuracy_curves.csv")
    assert rows[0] == ["scheme", "round", "accuracy_mean", "accuracy_std", "trials"]
    assert len(rows) == 1 + 2 * 2


def test_simulate_rejects_zero_rounds(small_config, tmp_path, capsys):
    code = run_cli(["simulate", "--config", str(small_config), "--schemes", "error-free,optimized", "--rounds", "0", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "rounds" in capsys.readouterr().err


def test_config_errors_surface(tmp_path, capsys):
    raw = load_raw_config("paper_default")
    raw["uav"]["d_thr"] = 0
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(raw))
    assert run_cli(["baseline", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "d_thr" in capsys.readouterr().err
    assert run_cli(["optimize", "--config", "no-such-preset", "--out", str(tmp_path / "o")]) == 2


def test_unknown_subcommand_and_unwritable_output(tmp_path, small_config):
    assert run_cli(["launch"]) != 0
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli(["baseline", "--config", str(small_config), "--out", str(blocker / "sub")]) == 2


def test_verify_quick(tmp_path, capsys):
    assert run_cli(["verify", "--config", "paper_default", "--trials", "2000", "--instances", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5 and "[FAIL]" not in out
    assert read_rows(tmp_path / "verify.csv")[0] == ["check", "passed", "worst", "tolerance"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "uavfl", "--help"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    for cmd in ("optimize", "simulate", "verify", "baseline", "plot-data"):
        assert cmd in res.stdout
