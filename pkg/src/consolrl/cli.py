"""Command-line entry points.

    consolrl run <config.ini> [--workers N] [--set section.key=value ...]
    consolrl drift-dump <config.ini> --steps N [--out drift.csv]
    consolrl gradcheck
    consolrl probe-timescales [--optimizer sgd|adam|both]
    consolrl summarize <run-dir-or-parent>
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from .agents import AgentConfig, make_agent
from .config import load_config
from .drift import init_drift, sample_next, slip_drift_config
from .harness import GRADCHECK_TOL, run_experiment, summarize
from .optim import normalized_ratios, timescale_probe


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"override must look like section.key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config, _parse_overrides(args.set))
    t0 = time.perf_counter()
    out_dir = run_experiment(cfg, workers=args.workers)
    print(f"wrote {out_dir} ({len(cfg.seeds)} seeds, "
          f"{cfg.total_steps} steps each, {time.perf_counter() - t0:.1f}s)")
    return 0


def cmd_drift_dump(args) -> int:
    cfg = load_config(args.config, _parse_overrides(args.set))
    drift_cfg = slip_drift_config(
        cfg.drift_kind, cfg.drift_regime, seed=args.seed,
        period=cfg.drift_period, noise_sigma=cfg.drift_noise_sigma,
        ou_theta=cfg.drift_ou_theta, ou_sigma=cfg.drift_ou_sigma,
    )
    state = init_drift(drift_cfg)
    rows = []
    for t in range(args.steps):
        value, state = sample_next(state, drift_cfg)
        rows.append((t, value))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "omega"])
        for t, value in rows:
            writer.writerow([t, repr(value)])
    print(f"wrote {args.out} ({args.steps} samples, kind={cfg.drift_kind.value}, "
          f"regime={cfg.drift_regime.value})")
    return 0


def cmd_gradcheck(args) -> int:
    """Finite-difference validation of every agent architecture."""
    rng = np.random.default_rng(args.seed)
    checks = {
        "dqn": AgentConfig(kind="dqn"),
        "dqn_sc": AgentConfig(kind="dqn", sc_k=9),
        "sf": AgentConfig(kind="sf"),
        "sf_sc": AgentConfig(kind="sf", sc_k=9),
        "sf_sc_attn": AgentConfig(kind="sf", sc_k=9, attention=True),
    }
    failed = False
    for name, cfg in checks.items():
        agent = make_agent(cfg, obs_dim=171, seed=args.seed)
        worst = agent.gradient_check(rng, probes=args.probes)
        extras = ""
        if hasattr(agent, "w_gradient_check"):
            w_err = agent.w_gradient_check(rng)
            worst = max(worst, w_err)
            extras = f" (w path {w_err:.2e})"
        status = "ok" if worst < GRADCHECK_TOL else "FAIL"
        if status == "FAIL":
            failed = True
        print(f"{name:12s} max rel err {worst:.3e}{extras}  [{status}]")
    return 1 if failed else 0


def cmd_probe(args) -> int:
    kappas = [float(k) for k in args.kappas.split(",")]
    optimizers = ["sgd", "adam"] if args.optimizer == "both" else [args.optimizer]
    for opt in optimizers:
        disp = timescale_probe(kappas, opt, steps=args.steps)
        ratios = normalized_ratios(disp)
        print(f"{opt}: displacements={['%.6g' % d for d in disp]} "
              f"normalized={['%.6g' % r for r in ratios]}")
    return 0


def cmd_summarize(args) -> int:
    result = summarize(args.path)
    for name, run in result["runs"].items():
        stts = [info["steps_to_threshold"] for info in run["per_seed"].values()]
        print(f"{name}: agent={run['agent']} mean_auc={run['mean_auc']:.4f} "
              f"auc_range=[{run['min_auc']:.4f}, {run['max_auc']:.4f}] "
              f"steps_to_threshold={stts}")
    print(f"wrote {args.path}/summary.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consolrl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config over all its seeds")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", default=[],
                   metavar="section.key=value")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("drift-dump", help="emit a (t, omega) CSV of the drift signal")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="drift.csv")
    p.add_argument("--set", action="append", default=[])
    p.set_defaults(func=cmd_drift_dump)

    p = sub.add_parser("gradcheck", help="finite-difference check of all architectures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("probe-timescales",
                       help="per-step displacement of SGD/Adam under scaled gradients")
    p.add_argument("--optimizer", choices=["sgd", "adam", "both"], default="both")
    p.add_argument("--kappas", default="0.125,0.0625,0.03125")
    p.add_argument("--steps", type=int, default=250)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("summarize", help="recompute metrics for finished runs")
    p.add_argument("path")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
