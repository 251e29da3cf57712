"""Experiment configuration: a sectioned key-value text format.

Sections mirror the module split ([run], [chain], [drift], [env], [agent]);
every key has a default, and unknown sections or keys are rejected so a
typo cannot silently fall back to a default. `config_hash` canonicalizes
the fully resolved configuration, so runs are identified by what they
actually used rather than by the file that happened to produce it.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentConfig
from .drift import DriftKind, Regime
from .gridworld import DEFAULT_LAYOUT, EnvConfig

AGENT_NAMES = {
    # name -> (kind, chain on, mechanism, attention)
    "dqn": ("dqn", False, "none", False),
    "dqn_sc": ("dqn", True, "none", False),
    "dqn_ewc": ("dqn", False, "ewc", False),
    "dqn_cbp": ("dqn", False, "cbp", False),
    "dqn_pinject": ("dqn", False, "pinject", False),
    "sf": ("sf", False, "none", False),
    "sf_sc": ("sf", True, "none", False),
    "sf_ewc": ("sf", False, "ewc", False),
    "sf_cbp": ("sf", False, "cbp", False),
    "sf_pinject": ("sf", False, "pinject", False),
    "sf_sc_attn": ("sf", True, "none", True),
}

_SCHEMA = {
    "run": {
        "agent": "dqn",
        "seeds": "0,1,2,3,4",
        "steps_per_task": "50000",
        "tasks_per_exposure": "2",
        "exposures": "2",
        "eval_every": "1000",
        "eval_episodes": "5",
        "threshold": "0.8",
        "threshold_window": "5",
        "out_dir": "results/run",
    },
    "chain": {
        "k": "9",
        "c1": "2.0",
        "g12": "0.125",
        "dt": "1.0",
        "capacity_rule": "2.0",
        "flow_rule": "2.0",
    },
    "drift": {
        "kind": "periodic_sine",
        "regime": "severe100",
        "period": "5000",
        "noise_sigma": "",
        "ou_theta": "0.001",
        "ou_sigma": "0.005",
        "refresh_interval": "1",
    },
    "env": {
        "episode_cap": "400",
        "layout": "",
    },
    "agent": {
        "hidden": "64",
        "sf_dim": "10",
        "lr": "1e-3",
        "w_lr": "1e-3",
        "gamma": "0.99",
        "batch_size": "32",
        "replay_capacity": "10000",
        "replay_min": "1000",
        "eps_end": "0.05",
        "eps_frac": "0.1",
        "target_tau": "0.01",
        "target_sync": "1000",
        "ewc_lambda": "25.0",
        "ewc_interval": "10000",
        "cbp_rate": "1e-4",
        "cbp_maturity": "1000",
        "cbp_decay": "0.99",
        "inject_frac": "0.5",
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    agent_name: str
    seeds: tuple[int, ...]
    eval_every: int
    eval_episodes: int
    threshold: float
    threshold_window: int
    out_dir: str
    env: EnvConfig
    drift_kind: DriftKind
    drift_regime: Regime
    drift_period: float
    drift_noise_sigma: float | None
    drift_ou_theta: float
    drift_ou_sigma: float
    agent: AgentConfig
    resolved: dict = field(compare=False, default_factory=dict)

    @property
    def total_steps(self) -> int:
        return self.env.total_steps

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _parse_values(raw: dict[str, dict[str, str]]) -> ExperimentConfig:
    run = raw["run"]
    chain = raw["chain"]
    drift = raw["drift"]
    env_sec = raw["env"]
    agent_sec = raw["agent"]

    name = run["agent"]
    if name not in AGENT_NAMES:
        raise ValueError(f"unknown agent {name!r}; known: {sorted(AGENT_NAMES)}")
    kind, chained, mechanism, attention = AGENT_NAMES[name]

    seeds = tuple(int(s) for s in run["seeds"].replace(" ", "").split(",") if s != "")
    if not seeds:
        raise ValueError("seeds list must not be empty")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")

    layout = DEFAULT_LAYOUT
    if env_sec["layout"]:
        layout = tuple(env_sec["layout"].split("|"))
    env = EnvConfig(
        layout=layout,
        episode_cap=int(env_sec["episode_cap"]),
        steps_per_task=int(run["steps_per_task"]),
        tasks_per_exposure=int(run["tasks_per_exposure"]),
        exposures=int(run["exposures"]),
        slip_refresh_interval=int(drift["refresh_interval"]),
    )

    total = env.total_steps
    agent = AgentConfig(
        kind=kind,
        sc_k=int(chain["k"]) if chained else 0,
        mechanism=mechanism,
        attention=attention,
        sf_dim=int(agent_sec["sf_dim"]),
        hidden=int(agent_sec["hidden"]),
        lr=float(agent_sec["lr"]),
        w_lr=float(agent_sec["w_lr"]),
        gamma=float(agent_sec["gamma"]),
        batch_size=int(agent_sec["batch_size"]),
        replay_capacity=int(agent_sec["replay_capacity"]),
        replay_min=int(agent_sec["replay_min"]),
        eps_end=float(agent_sec["eps_end"]),
        eps_decay_steps=max(1, int(float(agent_sec["eps_frac"]) * total)),
        target_tau=float(agent_sec["target_tau"]),
        target_sync=int(agent_sec["target_sync"]),
        chain_c1=float(chain["c1"]),
        chain_g12=float(chain["g12"]),
        chain_dt=float(chain["dt"]),
        chain_capacity_rule=float(chain["capacity_rule"]),
        chain_flow_rule=float(chain["flow_rule"]),
        ewc_lambda=float(agent_sec["ewc_lambda"]),
        ewc_interval=int(agent_sec["ewc_interval"]),
        cbp_rate=float(agent_sec["cbp_rate"]),
        cbp_maturity=int(agent_sec["cbp_maturity"]),
        cbp_decay=float(agent_sec["cbp_decay"]),
        inject_step=max(1, int(float(agent_sec["inject_frac"]) * total)),
    )

    return ExperimentConfig(
        agent_name=name,
        seeds=seeds,
        eval_every=int(run["eval_every"]),
        eval_episodes=int(run["eval_episodes"]),
        threshold=float(run["threshold"]),
        threshold_window=int(run["threshold_window"]),
        out_dir=run["out_dir"],
        env=env,
        drift_kind=DriftKind(drift["kind"]),
        drift_regime=Regime(drift["regime"]),
        drift_period=float(drift["period"]),
        drift_noise_sigma=(float(drift["noise_sigma"]) if drift["noise_sigma"] else None),
        drift_ou_theta=float(drift["ou_theta"]),
        drift_ou_sigma=float(drift["ou_sigma"]),
        agent=agent,
        resolved=raw,
    )


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse and validate a config file; overrides use 'section.key' form."""
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text()
    parser.read_string(text)
    return parse_config(parser, overrides)


def load_config_string(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    return parse_config(parser, overrides)


def parse_config(parser: configparser.ConfigParser,
                 overrides: dict[str, str] | None = None) -> ExperimentConfig:
    raw: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
    for section, defaults in _SCHEMA.items():
        raw[section] = dict(defaults)
        if parser.has_section(section):
            raw[section].update(dict(parser[section]))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ValueError(f"unknown override {dotted!r}")
        raw[section][key] = value
    return _parse_values(raw)


def default_config() -> ExperimentConfig:
    return parse_config(configparser.ConfigParser(interpolation=None))
