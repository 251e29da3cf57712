#!/usr/bin/env python3
"""Run the experiment-scale acceptance suites into results/acceptance/.

Suites:
  fig3      four agents x 5 seeds on the severe periodic two-task protocol
  ablation  chain-length sweep K in {3, 6, 9} (K=9 reuses the fig3 run)
  drift     3 drift kinds x 3 regimes for the plain DQN agent
  attention one short attention-readout run for the probability logs

Every run is deterministic given its config, so re-running refreshes the
directory with identical CSVs. Expect a few hours of CPU for `all`.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from consolrl.config import load_config_string
from consolrl.harness import run_experiment

ROOT = Path(__file__).resolve().parent.parent
RESULTS = ROOT / "results" / "acceptance"

FIG3_AGENTS = ("sf_sc", "dqn", "dqn_pinject", "dqn_sc")
ABLATION_KS = (3, 6)  # K = 9 is served by the fig3 sf_sc run
DRIFT_KINDS = ("periodic_sine", "nonperiodic_sine", "ou")
DRIFT_REGIMES = ("mild25", "moderate50", "severe100")

BASE = """
[run]
agent = {agent}
seeds = {seeds}
steps_per_task = {steps_per_task}
eval_every = 1000
eval_episodes = 5
threshold = 0.8
threshold_window = 5
out_dir = {out_dir}

[chain]
k = {k}

[drift]
kind = {kind}
regime = {regime}
"""


def build(agent: str, out_dir: Path, *, seeds="0,1,2,3,4", steps_per_task=50_000,
          k=9, kind="periodic_sine", regime="severe100"):
    return load_config_string(BASE.format(
        agent=agent, seeds=seeds, steps_per_task=steps_per_task,
        out_dir=out_dir, k=k, kind=kind, regime=regime))


def suite_configs(suite: str):
    cfgs = []
    if suite in ("fig3", "all"):
        for agent in FIG3_AGENTS:
            cfgs.append(build(agent, RESULTS / "fig3" / agent))
    if suite in ("ablation", "all"):
        for k in ABLATION_KS:
            cfgs.append(build("sf_sc", RESULTS / "ablation" / f"k{k}", k=k))
    if suite in ("drift", "all"):
        for kind in DRIFT_KINDS:
            for regime in DRIFT_REGIMES:
                cfgs.append(build(
                    "dqn", RESULTS / "drift_matrix" / f"{kind}_{regime}",
                    seeds="0,1,2", steps_per_task=12_500,
                    kind=kind, regime=regime))
    if suite in ("attention", "all"):
        cfgs.append(build("sf_sc_attn", RESULTS / "attention",
                          seeds="0", steps_per_task=2_500))
    if not cfgs:
        raise SystemExit(f"unknown suite {suite!r}")
    return cfgs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--suite", default="all",
                        choices=["fig3", "ablation", "drift", "attention", "all"])
    parser.add_argument("--workers", type=int, default=2,
                        help="parallel seed workers per experiment")
    parser.add_argument("--only-missing", action="store_true",
                        help="skip experiments whose manifest already exists")
    args = parser.parse_args()

    for cfg in suite_configs(args.suite):
        out = Path(cfg.out_dir)
        if args.only_missing and (out / "manifest.json").exists():
            print(f"skip (exists): {out}")
            continue
        t0 = time.perf_counter()
        run_experiment(cfg, workers=args.workers)
        print(f"done: {out}  [{time.perf_counter() - t0:.0f}s]", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
