"""Experiment runner: seeded training loops, metrics and log emission.

Each seed produces `run_<seed>.csv` with one row per evaluation point
(deterministic given config and seed) and `throughput_<seed>.csv` with the
wall-clock training rate, kept separate so the main log stays byte-stable.
A `manifest.json` records the resolved config, its hash, the seeds and the
code version. `summarize` recomputes the headline metrics from the raw CSVs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .agents import BaseAgent, make_agent
from .config import ExperimentConfig
from .drift import slip_drift_config
from .gridworld import FourRooms

GRADCHECK_TOL = 1e-4


@dataclass
class RunRecord:
    seed: int
    step: int
    episode_return: float       # greedy evaluation mean
    train_return: float         # mean over training episodes in the window
    drift_value: float
    slip_p: float
    wall_steps_per_sec: float

    CSV_FIELDS = ("seed", "step", "episode_return", "train_return",
                  "drift_value", "slip_p")


def _fmt(x: float) -> str:
    return repr(float(x))


def run_csv_path(out_dir: Path, seed: int) -> Path:
    return out_dir / f"run_{seed}.csv"


def attention_csv_path(out_dir: Path, seed: int) -> Path:
    return out_dir / f"attention_{seed}.csv"


def evaluate_policy(agent: BaseAgent, cfg: ExperimentConfig, train_env: FourRooms,
                    seed: int, eval_index: int) -> float:
    """Mean return over greedy episodes in a sandbox copy of the environment.

    The copy starts from the live drift value and schedule position but owns
    its RNG, so evaluation never perturbs the training run.
    """
    drift_cfg = slip_drift_config(
        cfg.drift_kind, cfg.drift_regime,
        seed=int(np.random.SeedSequence((seed, 5, eval_index)).generate_state(1)[0]),
        period=cfg.drift_period, noise_sigma=cfg.drift_noise_sigma,
        ou_theta=cfg.drift_ou_theta, ou_sigma=cfg.drift_ou_sigma,
    )
    env = FourRooms(cfg.env, drift_cfg, seed=seed * 1_000_003 + eval_index)
    env.drift.t = train_env.drift.t
    env.drift.x = train_env.drift.x
    env._slip_p = train_env._slip_p
    env.global_step = train_env.global_step
    total = 0.0
    for _ in range(cfg.eval_episodes):
        state = env.reset()
        obs = env.feature_obs(state)
        ep_ret = 0.0
        done = False
        while not done:
            action = agent.act_greedy(obs)
            state, outcome = env.step(state, action)
            obs = outcome.next_obs
            ep_ret += outcome.reward
            done = outcome.done
        total += ep_ret
    return total / cfg.eval_episodes


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: str | Path) -> Path:
    """Train one seed to completion and write its logs; returns the CSV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    drift_cfg = slip_drift_config(
        cfg.drift_kind, cfg.drift_regime,
        seed=int(np.random.SeedSequence((seed, 6)).generate_state(1)[0]),
        period=cfg.drift_period, noise_sigma=cfg.drift_noise_sigma,
        ou_theta=cfg.drift_ou_theta, ou_sigma=cfg.drift_ou_sigma,
    )
    env = FourRooms(cfg.env, drift_cfg, seed=seed)
    if not env.reachable_from_everywhere():
        raise RuntimeError("layout failed the reachability check")
    agent = make_agent(cfg.agent, env.obs_dim, seed)

    # Architecture gate: no training on gradients that do not match finite
    # differences. Uses its own RNG so the run itself is unaffected.
    rng_gc = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    worst = agent.gradient_check(rng_gc)
    if worst > GRADCHECK_TOL:
        raise RuntimeError(f"gradient check failed: max rel err {worst:.2e}")

    records: list[RunRecord] = []
    attn_rows: list[list[float]] = []
    state = env.reset(0)
    obs = env.feature_obs(state)
    window_returns: list[float] = []
    last_train_return = 0.0
    ep_return = 0.0
    wall_prev = time.perf_counter()
    eval_index = 0

    for step in range(1, cfg.total_steps + 1):
        action = agent.act(obs)
        state, outcome = env.step(state, action)
        agent.observe(obs, action, outcome.reward, outcome.next_obs, outcome.done)
        ep_return += outcome.reward
        obs = outcome.next_obs
        if outcome.done:
            window_returns.append(ep_return)
            ep_return = 0.0
            state = env.reset()
            obs = env.feature_obs(state)

        if step % cfg.eval_every == 0:
            eval_index += 1
            eval_return = evaluate_policy(agent, cfg, env, seed, eval_index)
            if window_returns:
                last_train_return = float(np.mean(window_returns))
                window_returns.clear()
            now = time.perf_counter()
            sps = cfg.eval_every / max(now - wall_prev, 1e-9)
            wall_prev = time.perf_counter()
            records.append(RunRecord(
                seed=seed, step=step, episode_return=eval_return,
                train_return=last_train_return, drift_value=env.drift_value,
                slip_p=env._slip_p, wall_steps_per_sec=sps,
            ))
            probs = getattr(agent, "drain_attention_probs", lambda: None)()
            if probs is not None:
                attn_rows.append([step, *probs.tolist()])

    csv_path = run_csv_path(out_dir, seed)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RunRecord.CSV_FIELDS)
        for r in records:
            writer.writerow([r.seed, r.step, _fmt(r.episode_return),
                             _fmt(r.train_return), _fmt(r.drift_value),
                             _fmt(r.slip_p)])
    with (out_dir / f"throughput_{seed}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "wall_steps_per_sec"])
        for r in records:
            writer.writerow([r.step, f"{r.wall_steps_per_sec:.1f}"])
    if attn_rows:
        k = cfg.agent.sc_k
        with attention_csv_path(out_dir, seed).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"p_u{i}" for i in range(2, k + 1)])
            for row in attn_rows:
                writer.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
    return csv_path


def _run_seed_entry(args) -> str:
    cfg, seed, out_dir = args
    return str(run_seed(cfg, seed, out_dir))


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> Path:
    """Run every seed (optionally in parallel processes) and write the manifest."""
    if not cfg.seeds:
        raise ValueError("seeds list must not be empty")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed, out_dir) for seed in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with ctx.Pool(min(workers, len(jobs))) as pool:
            pool.map(_run_seed_entry, jobs)
    else:
        for job in jobs:
            _run_seed_entry(job)
    manifest = {
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "agent": cfg.agent_name,
        "seeds": list(cfg.seeds),
        "steps_per_task": cfg.env.steps_per_task,
        "tasks_per_exposure": cfg.env.tasks_per_exposure,
        "exposures": cfg.env.exposures,
        "eval_every": cfg.eval_every,
        "threshold": cfg.threshold,
        "threshold_window": cfg.threshold_window,
        "drift": {"kind": cfg.drift_kind.value, "regime": cfg.drift_regime.value},
        "runs": {str(s): run_csv_path(out_dir, s).name for s in cfg.seeds},
        "config": cfg.resolved,
    }
    with (out_dir / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def auc(steps: np.ndarray, returns: np.ndarray) -> float:
    """Trapezoidal area under return-vs-step, normalized by the step span."""
    steps = np.asarray(steps, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if steps.size < 2:
        raise ValueError("need at least two records for an AUC")
    span = steps[-1] - steps[0]
    if span <= 0:
        raise ValueError("steps must be strictly increasing")
    return float(np.trapezoid(returns, steps) / span)


def steps_to_threshold(steps: np.ndarray, returns: np.ndarray, threshold: float,
                       window: int) -> int | None:
    """First step whose trailing windowed mean return clears the threshold."""
    if window < 1:
        raise ValueError("window must be >= 1")
    steps = np.asarray(steps)
    returns = np.asarray(returns, dtype=np.float64)
    for i in range(len(returns)):
        lo = max(0, i - window + 1)
        if returns[lo:i + 1].mean() >= threshold:
            return int(steps[i])
    return None


def load_run(csv_path: str | Path) -> dict[str, np.ndarray]:
    with Path(csv_path).open() as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"empty run log {csv_path}")
    out = {}
    for key in rows[0]:
        out[key] = np.array([float(r[key]) for r in rows])
    return out


def summarize_run_dir(run_dir: str | Path) -> dict:
    """Per-seed and aggregate metrics for a single finished run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    threshold = manifest["threshold"]
    window = manifest["threshold_window"]
    steps_per_exposure = manifest["steps_per_task"] * manifest["tasks_per_exposure"]
    per_seed = {}
    for seed in manifest["seeds"]:
        data = load_run(run_dir / manifest["runs"][str(seed)])
        steps = data["step"]
        rets = data["episode_return"]
        seed_info = {
            "auc": auc(steps, rets),
            "final_return": float(rets[-min(window, len(rets)):].mean()),
            "steps_to_threshold": steps_to_threshold(steps, rets, threshold, window),
            "exposures": {},
        }
        for exp in range(1, manifest["exposures"] + 1):
            lo = (exp - 1) * steps_per_exposure
            hi = exp * steps_per_exposure
            mask = (steps > lo) & (steps <= hi)
            if mask.sum() >= 2:
                stt = steps_to_threshold(steps[mask], rets[mask], threshold, window)
                seed_info["exposures"][str(exp)] = {
                    "auc": auc(steps[mask], rets[mask]),
                    "steps_to_threshold": None if stt is None else int(stt - lo),
                }
        per_seed[str(seed)] = seed_info
    aucs = [info["auc"] for info in per_seed.values()]
    summary = {
        "agent": manifest["agent"],
        "config_hash": manifest["config_hash"],
        "seeds": manifest["seeds"],
        "mean_auc": float(np.mean(aucs)),
        "min_auc": float(np.min(aucs)),
        "max_auc": float(np.max(aucs)),
        "per_seed": per_seed,
    }
    return summary


def summarize(path: str | Path) -> dict:
    """Summarize one run directory, or every run directory under a parent."""
    path = Path(path)
    if (path / "manifest.json").exists():
        result = {"runs": {path.name: summarize_run_dir(path)}}
    else:
        runs = {}
        for child in sorted(p for p in path.iterdir() if p.is_dir()):
            if (child / "manifest.json").exists():
                runs[child.name] = summarize_run_dir(child)
        if not runs:
            raise FileNotFoundError(f"no run directories with manifests under {path}")
        result = {"runs": runs}
    with (path / "summary.json").open("w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result
