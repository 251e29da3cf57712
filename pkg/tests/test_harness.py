import json
from pathlib import Path

import numpy as np
import pytest

from consolrl.cli import main as cli_main
from consolrl.config import load_config_string
from consolrl.harness import (
    auc,
    load_run,
    run_experiment,
    steps_to_threshold,
    summarize,
    summarize_run_dir,
)

TINY = """
[run]
agent = {agent}
seeds = {seeds}
steps_per_task = 400
eval_every = 200
eval_episodes = 2
out_dir = {out}

[env]
episode_cap = 60

[agent]
hidden = 16
sf_dim = 6
replay_capacity = 2000
replay_min = 128
batch_size = 8
"""


def tiny_cfg(out, agent="dqn", seeds="0"):
    return load_config_string(TINY.format(agent=agent, seeds=seeds, out=out))


class TestRunExperiment:
    def test_same_seed_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_experiment(tiny_cfg(a))
        run_experiment(tiny_cfg(b))
        assert (a / "run_0.csv").read_bytes() == (b / "run_0.csv").read_bytes()

    def test_one_csv_per_seed_plus_manifest(self, tmp_path):
        out = tmp_path / "five"
        run_experiment(tiny_cfg(out, seeds="0,1,2,3,4"))
        csvs = sorted(p.name for p in out.glob("run_*.csv"))
        assert csvs == [f"run_{i}.csv" for i in range(5)]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [0, 1, 2, 3, 4]
        assert set(manifest["runs"]) == {"0", "1", "2", "3", "4"}
        assert manifest["config_hash"]

    def test_empty_seeds_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            tiny_cfg(tmp_path / "x", seeds="")

    def test_records_step_monotone_and_schema(self, tmp_path):
        out = tmp_path / "mono"
        run_experiment(tiny_cfg(out))
        data = load_run(out / "run_0.csv")
        assert list(data) == ["seed", "step", "episode_return", "train_return",
                              "drift_value", "slip_p"]
        assert np.all(np.diff(data["step"]) > 0)
        assert (out / "throughput_0.csv").exists()

    def test_sf_sc_run_writes_logs(self, tmp_path):
        out = tmp_path / "sc"
        run_experiment(tiny_cfg(out, agent="sf_sc"))
        assert (out / "run_0.csv").exists()

    def test_attention_run_writes_probability_csv(self, tmp_path):
        out = tmp_path / "attn"
        run_experiment(tiny_cfg(out, agent="sf_sc_attn"))
        header = (out / "attention_0.csv").read_text().splitlines()
        assert header[0] == "step," + ",".join(f"p_u{i}" for i in range(2, 10))
        row = [float(x) for x in header[1].split(",")[1:]]
        assert sum(row) == pytest.approx(1.0, abs=1e-6)


class TestMetrics:
    def test_constant_series(self):
        steps = np.arange(1, 11) * 100
        assert auc(steps, np.ones(10)) == pytest.approx(1.0)

    def test_linear_ramp(self):
        steps = np.linspace(0, 1, 101)
        assert auc(steps, np.linspace(0, 1, 101)) == pytest.approx(0.5)

    def test_single_record_rejected(self):
        with pytest.raises(ValueError):
            auc(np.array([1.0]), np.array([0.5]))

    def test_nonnegative_series_nonnegative_auc(self):
        rng = np.random.default_rng(0)
        vals = rng.random(50)
        assert auc(np.arange(50), vals) >= 0

    def test_threshold_immediate(self):
        steps = np.array([100, 200, 300])
        assert steps_to_threshold(steps, np.array([0.9, 0.9, 0.9]), 0.8, 10) == 100

    def test_threshold_never(self):
        steps = np.array([100, 200, 300])
        assert steps_to_threshold(steps, np.array([0.1, 0.2, 0.3]), 0.8, 2) is None

    def test_threshold_crossing_point(self):
        steps = np.arange(1000, 11_000, 1000)
        rets = np.array([0.0, 0.0, 0.0, 0.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9])
        # trailing window of 2: mean first clears 0.8 at step 6000
        assert steps_to_threshold(steps, rets, 0.8, 2) == 6000
        assert steps_to_threshold(steps, rets, 0.8, 1) == 5000

    def test_threshold_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        steps = np.arange(1, 101)
        rets = np.cumsum(rng.random(100)) / np.arange(1, 101)
        prev = 0
        for th in (0.2, 0.4, 0.6):
            stt = steps_to_threshold(steps, rets, th, 3)
            if stt is None:
                break
            assert stt >= prev
            prev = stt

    def test_window_validation(self):
        with pytest.raises(ValueError):
            steps_to_threshold(np.array([1]), np.array([1.0]), 0.5, 0)


class TestSummarize:
    def test_single_run_dir(self, tmp_path):
        out = tmp_path / "one"
        run_experiment(tiny_cfg(out, seeds="0,1"))
        summary = summarize_run_dir(out)
        assert set(summary["per_seed"]) == {"0", "1"}
        for info in summary["per_seed"].values():
            assert "auc" in info and "exposures" in info
        assert summary["min_auc"] <= summary["mean_auc"] <= summary["max_auc"]

    def test_parent_dir_aggregates(self, tmp_path):
        run_experiment(tiny_cfg(tmp_path / "a"))
        run_experiment(tiny_cfg(tmp_path / "b", agent="sf"))
        result = summarize(tmp_path)
        assert set(result["runs"]) == {"a", "b"}
        assert (tmp_path / "summary.json").exists()

    def test_missing_manifest_is_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError):
            summarize_run_dir(tmp_path / "empty")

    def test_auc_recomputable_from_raw_csv(self, tmp_path):
        out = tmp_path / "r"
        run_experiment(tiny_cfg(out))
        summary = summarize_run_dir(out)
        data = load_run(out / "run_0.csv")
        again = auc(data["step"], data["episode_return"])
        assert summary["per_seed"]["0"]["auc"] == again


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            load_config_string("[run]\nagnet = dqn\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown config section"):
            load_config_string("[runn]\nagent = dqn\n")

    def test_unknown_agent_rejected(self):
        with pytest.raises(ValueError, match="unknown agent"):
            load_config_string("[run]\nagent = ppo\n")

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            load_config_string("[run]\nseeds = 1,1\n")

    def test_hash_stable_and_sensitive(self):
        a = load_config_string("[run]\nagent = dqn\n")
        b = load_config_string("[run]\nagent = dqn\n")
        c = load_config_string("[run]\nagent = sf\n")
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    def test_defaults_follow_schedule(self):
        cfg = load_config_string("[run]\nsteps_per_task = 1000\n")
        assert cfg.total_steps == 4000
        assert cfg.agent.eps_decay_steps == 400   # 10% of the run
        assert cfg.agent.inject_step == 2000      # halfway


class TestCli:
    def test_probe_timescales(self, capsys):
        assert cli_main(["probe-timescales", "--optimizer", "sgd"]) == 0
        out = capsys.readouterr().out
        assert "'4'" in out and "'2'" in out and "'1'" in out

    def test_drift_dump(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.ini"
        cfg_file.write_text("[run]\nagent = dqn\n")
        dump = tmp_path / "drift.csv"
        assert cli_main(["drift-dump", str(cfg_file), "--steps", "100",
                         "--out", str(dump)]) == 0
        lines = dump.read_text().splitlines()
        assert lines[0] == "t,omega"
        assert len(lines) == 101

    def test_summarize_cli(self, tmp_path, capsys):
        out = tmp_path / "x"
        run_experiment(tiny_cfg(out))
        assert cli_main(["summarize", str(out)]) == 0
        assert "mean_auc" in capsys.readouterr().out

    def test_run_cli(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.ini"
        cfg_file.write_text(TINY.format(agent="dqn", seeds="0",
                                        out=tmp_path / "out"))
        assert cli_main(["run", str(cfg_file)]) == 0
        assert (tmp_path / "out" / "manifest.json").exists()
