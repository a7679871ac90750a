import csv
import os
import re
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

import edgesim.engine
from edgesim import cli
from edgesim.config import (
    ConfigError,
    RunConfig,
    apply_override,
    build_config,
    default_raw,
    load_config,
    read_raw,
)
from edgesim.datagen import GenConfig
from edgesim.engine import EngineConfig
from edgesim.model import InvariantError, Tier

ROOT = Path(__file__).resolve().parent.parent
TINY = str(ROOT / "configs" / "tiny.yaml")
DEFAULT = str(ROOT / "configs" / "default.yaml")

SUMMARY = re.compile(r"^cycles=\d+ apps_finished=\d+ mean_makespan=(nan|\d+\.\d{3}) "
                     r"total_energy_wh=\d+\.\d{6}$")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- config -------------------------------------------------------------------------

def test_defaults_round_trip_through_yaml():
    cfg = build_config(default_raw(), env={})
    assert cfg.generation == GenConfig(seed=1)
    assert cfg.engine == EngineConfig(seed=1)
    shipped = load_config(DEFAULT, env={})
    assert shipped.generation == cfg.generation and shipped.engine == cfg.engine
    assert RunConfig().agents == shipped.agents == 24


@pytest.mark.parametrize("raw, fragment", [
    ({"sede": 3}, "'sede'"),
    ({"generation": {"num_app": 3}}, "'generation.num_app'"),
    ({"generation": {"iot": {"cores": [4]}}}, "'generation.iot.cores'"),
    ({"churn": {"manual_script": []}}, "'churn.manual_script'"),
    ({"engine": {"window": {}}}, "'engine.window'"),
])
def test_unknown_keys_rejected(raw, fragment):
    with pytest.raises(ConfigError, match=re.escape(fragment)):
        build_config(raw, env={})


@pytest.mark.parametrize("raw", [
    {"seed": "one"},
    {"agents": 0},
    {"generation": {"num_apps": "many"}},
    {"generation": {"tasks_per_app": [20]}},
    {"generation": {"num_apps": -4}},
    {"engine": {"check_invariants": "yes"}},
    {"churn": {"add_mix": {"Cloud": 1.0}}},
    {"churn": {"event_probability": 2}},
    {"window": "wide"},
    {"scheduler": "nope"},
])
def test_bad_values_rejected(raw):
    with pytest.raises(ConfigError):
        build_config(raw, env={})


def test_scheduler_error_lists_names():
    with pytest.raises(ConfigError, match="greedy_eft, min_energy, random"):
        build_config({"scheduler": "nope"}, env={})


def test_seed_variable_overrides_everywhere():
    cfg = build_config({"seed": 3}, env={"SCHEDGE_SEED": "7"})
    assert cfg.seed == cfg.generation.seed == cfg.engine.seed == 7
    with pytest.raises(ConfigError):
        build_config({}, env={"SCHEDGE_SEED": "seven"})


def test_referenced_paths_must_exist(tmp_path):
    with pytest.raises(ConfigError, match="workload_dir"):
        build_config({"workload_dir": str(tmp_path / "missing")}, env={})
    with pytest.raises(ConfigError, match="churn.script"):
        build_config({"churn": {"script": str(tmp_path / "none.csv")}}, env={})


def test_churn_script_is_loaded(tmp_path):
    (tmp_path / "c.csv").write_text("cycle,action,tier\n4,add,IoT\n")
    cfg = build_config({"churn": {"script": "c.csv"}}, base_dir=str(tmp_path), env={})
    assert [(d.cycle, d.action, d.tier) for d in cfg.engine.churn.manual_script] == [(4, "add", Tier.IOT)]


def test_overrides():
    raw = {}
    apply_override(raw, "generation.num_apps=5")
    apply_override(raw, "churn.enabled=false")
    apply_override(raw, "generation.tasks_per_app=[2, 3]")
    assert raw == {"generation": {"num_apps": 5, "tasks_per_app": [2, 3]}, "churn": {"enabled": False}}
    with pytest.raises(ConfigError):
        apply_override(raw, "no_equals_sign")


def test_read_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        read_raw(bad)
    with pytest.raises(OSError):
        read_raw(tmp_path / "absent.yaml")


# --- generate ---------------------------------------------------------------------------

def test_generate_default_config(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "generate", DEFAULT, "--out", tmp_path)
    assert code == 0
    assert len(rows(tmp_path / "applications.csv")) == 10_001
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert manifest[:2] == ["seed=1", "num_apps=10000"]
    assert "num_devices=151" in manifest


def test_generate_zero_apps(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "generate", TINY, "--set", "generation.num_apps=0", "--out", tmp_path)
    assert code == 0
    assert rows(tmp_path / "tasks.csv") == [
        ["task_id", "app_id", "compute_load", "input_size_mb", "output_size_mb", "safety_level", "predecessors"]]


def test_generate_same_seed_same_manifest(tmp_path, capsys):
    for d in ("a", "b"):
        assert run_cli(capsys, "generate", TINY, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()


def test_generate_unwritable_target(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run_cli(capsys, "generate", TINY, "--out", blocker / "sub")
    assert code == 3 and "I/O error" in err


# --- run ---------------------------------------------------------------------------

def test_run_tiny(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", TINY, "--set", f"output_dir={tmp_path}",
                           "--event-log", tmp_path / "events.csv")
    assert code == 0
    line = out.strip()
    assert SUMMARY.match(line), line
    assert "apps_finished=2" in line
    assert len(rows(tmp_path / "apps.csv")) == 3
    assert rows(tmp_path / "events.csv")[0] == ["cycle", "event_kind", "subject_id", "detail"]
    # Early stop: the run ends on the cycle the last app finished.
    last = max(int(r[2]) for r in rows(tmp_path / "apps.csv")[1:])
    assert f"cycles={last + 1} " in line


def test_run_exact_cycles(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", TINY, "--set", f"output_dir={tmp_path}",
                           "--set", "engine.total_cycles=400", "--exact-cycles")
    assert code == 0 and out.startswith("cycles=400 ")


def test_run_unknown_scheduler(capsys):
    code, _, err = run_cli(capsys, "run", TINY, "--set", "scheduler=nope")
    assert code == 2
    assert "greedy_eft" in err and "min_energy" in err and "random" in err


def test_run_missing_config(tmp_path, capsys):
    assert run_cli(capsys, "run", tmp_path / "nope.yaml")[0] == 3


def test_run_invariant_breach(tmp_path, capsys, monkeypatch):
    def broken(state, deep=True):
        raise InvariantError("ledger mismatch")

    monkeypatch.setattr(edgesim.engine, "check_invariants", broken)
    code, _, err = run_cli(capsys, "run", TINY, "--set", f"output_dir={tmp_path}",
                           "--set", "engine.check_invariants=true")
    assert code == 4 and "ledger mismatch" in err


def test_run_from_workload_dir(tmp_path, capsys):
    assert run_cli(capsys, "generate", TINY, "--out", tmp_path / "w")[0] == 0
    args = ("run", TINY, "--set", f"workload_dir={tmp_path / 'w'}", "--set", f"output_dir={tmp_path / 'o'}")
    code, out, _ = run_cli(capsys, *args)
    assert code == 0 and "apps_finished=2" in out
    p = tmp_path / "w" / "tasks.csv"
    p.write_text(p.read_text().replace("a00000t00,a00000,", "a00000t00,a00000,x", 1))
    assert run_cli(capsys, *args)[0] == 3


def test_run_is_reproducible(tmp_path, capsys):
    for d in ("x", "y"):
        assert run_cli(capsys, "run", TINY, "--set", f"output_dir={tmp_path / d}")[0] == 0
    for name in ("cycles.csv", "apps.csv", "devices.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


# --- sweep ---------------------------------------------------------------------------

def test_sweep_four_probabilities(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, _, _ = run_cli(capsys, "sweep", TINY, "--probabilities", "0.01,0.05,0.1,0.15",
                         "--cycles", 300, "--out", out, "--set", "sweep_seeds=2")
    assert code == 0
    table = rows(out)
    assert len(table) == 5
    assert [float(r[0]) for r in table[1:]] == [0.01, 0.05, 0.1, 0.15]


def test_sweep_zero_probability(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert run_cli(capsys, "sweep", TINY, "--probabilities", "0", "--cycles", 200, "--out", out,
                   "--set", "sweep_seeds=2")[0] == 0
    assert rows(out)[1] == ["0.0", "0.0", "0.0", "0.0", "0.0"]


@pytest.mark.parametrize("probs", ["1.5", "-0.1", "abc", ",", "nan"])
def test_sweep_bad_probabilities(capsys, probs):
    assert run_cli(capsys, "sweep", TINY, "--probabilities", probs)[0] == 2


def test_sweep_default_output_path(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "sweep", TINY, "--probabilities", "0.1", "--cycles", 50,
                           "--set", f"output_dir={tmp_path}", "--set", "sweep_seeds=1")
    assert code == 0 and out.strip() == os.path.join(str(tmp_path), "churn_sweep.csv")


# --- plot-data -------------------------------------------------------------------------

@pytest.fixture
def finished_run(tmp_path, capsys):
    assert run_cli(capsys, "run", TINY, "--set", f"output_dir={tmp_path}",
                   "--set", "churn.enabled=true", "--set", "churn.event_probability=0.05")[0] == 0
    return tmp_path


@pytest.mark.parametrize("kind", ["iteration_time", "memory_proxy", "churn"])
def test_plot_series_row_counts(finished_run, capsys, kind):
    out = finished_run / f"{kind}.csv"
    assert run_cli(capsys, "plot-data", finished_run, kind, out)[0] == 0
    assert len(rows(out)) == len(rows(finished_run / "cycles.csv"))


def test_plot_histogram(finished_run, capsys):
    out = finished_run / "hist.csv"
    assert run_cli(capsys, "plot-data", finished_run, "makespan_hist", out)[0] == 0
    assert sum(int(r[2]) for r in rows(out)[1:]) == 2


def test_plot_errors(finished_run, tmp_path, capsys):
    assert run_cli(capsys, "plot-data", finished_run, "pie", tmp_path / "x.csv")[0] == 2
    assert run_cli(capsys, "plot-data", tmp_path / "none", "churn", tmp_path / "x.csv")[0] == 3
    (finished_run / "cycles.csv").write_text("wrong,header\n")
    assert run_cli(capsys, "plot-data", finished_run, "churn", tmp_path / "x.csv")[0] == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "edgesim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("generate", "run", "sweep", "plot-data"):
        assert sub in res.stdout


def test_config_file_is_plain_yaml():
    with open(TINY) as fh:
        assert yaml.safe_load(fh)["generation"]["num_apps"] == 2
