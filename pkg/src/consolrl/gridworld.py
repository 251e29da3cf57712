"""Slippery Four Rooms: a 13x13 gridworld with drifting action slippage.

Four rooms joined by single-cell doorways, one green and one yellow box.
Each step the commanded move is replaced, with the current slip
probability, by one of the three other moves; the slip probability is
refreshed from a drift process every `slip_refresh_interval` steps. The
reward mapping alternates between two tasks on a fixed step schedule
(green +1 / yellow -1, then swapped), repeated for a number of exposures.
Observations are a one-hot over the 169 cells plus two always-zero flag
dims, so nothing in the observation identifies the task.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftConfig, DriftState, init_drift, sample_next

DEFAULT_LAYOUT = (
    "#############",
    "#     #    g#",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "### ##### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#v    #     #",
    "#############",
)
# 'g' marks the green box, 'v' the yellow box. Doorways sit at (3,6), (9,6),
# (6,3) and (6,9), one per shared wall.

N_ACTIONS = 4
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


class TaskId(enum.IntEnum):
    TASK1 = 1
    TASK2 = 2


@dataclass(frozen=True)
class EnvConfig:
    layout: tuple[str, ...] = DEFAULT_LAYOUT
    episode_cap: int = 400
    steps_per_task: int = 50_000
    tasks_per_exposure: int = 2
    exposures: int = 2
    slip_refresh_interval: int = 1

    @property
    def total_steps(self) -> int:
        return self.steps_per_task * self.tasks_per_exposure * self.exposures


@dataclass(frozen=True)
class GridWorldState:
    pos: tuple[int, int]
    task_id: TaskId
    exposure: int
    step_in_episode: int
    slip_p: float
    goals: dict = field(default_factory=dict)  # {"green": (r, c), "yellow": (r, c)}


@dataclass(frozen=True)
class StepOutcome:
    next_obs: np.ndarray
    reward: float
    done: bool
    executed_action: Action
    slip_occurred: bool


def parse_layout(rows: tuple[str, ...]):
    """Returns (wall mask, green pos, yellow pos); validates shape and goals."""
    n_rows = len(rows)
    n_cols = len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise ValueError("layout rows must have equal length")
    walls = np.zeros((n_rows, n_cols), dtype=bool)
    green = yellow = None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                walls[r, c] = True
            elif ch == "g":
                green = (r, c)
            elif ch == "v":
                yellow = (r, c)
            elif ch != " ":
                raise ValueError(f"unknown layout cell {ch!r} at ({r},{c})")
    if green is None or yellow is None:
        raise ValueError("layout must mark one green (g) and one yellow (v) box")
    return walls, green, yellow


def schedule_lookup(cfg: EnvConfig, global_step: int) -> tuple[TaskId, int]:
    """Task and exposure active at a global step (clamped at the end)."""
    step = min(max(global_step, 0), cfg.total_steps - 1)
    phase = step // cfg.steps_per_task
    task = TaskId.TASK1 if phase % cfg.tasks_per_exposure == 0 else TaskId.TASK2
    exposure = phase // cfg.tasks_per_exposure + 1
    return task, exposure


class FourRooms:
    """Owns the layout, drift generator and RNG; states are plain values."""

    def __init__(self, cfg: EnvConfig, drift_cfg: DriftConfig, seed: int):
        self.cfg = cfg
        self.drift_cfg = drift_cfg
        self.walls, self.green, self.yellow = parse_layout(cfg.layout)
        self.n_rows, self.n_cols = self.walls.shape
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9E77)))
        self.drift: DriftState = init_drift(drift_cfg)
        self.global_step = 0
        self._slip_p = self._refresh_slip()
        free = [
            (r, c)
            for r in range(self.n_rows)
            for c in range(self.n_cols)
            if not self.walls[r, c]
        ]
        self.free_cells = free
        self.start_cells = [p for p in free if p not in (self.green, self.yellow)]

    def _refresh_slip(self) -> float:
        value, self.drift = sample_next(self.drift, self.drift_cfg)
        self._slip_p = value
        return value

    @property
    def drift_value(self) -> float:
        return self.drift.x

    def reset(self, schedule_position: int | None = None) -> GridWorldState:
        """New episode at a uniformly random free non-goal cell."""
        if schedule_position is not None:
            self.global_step = schedule_position
        task, exposure = schedule_lookup(self.cfg, self.global_step)
        pos = self.start_cells[self.rng.integers(len(self.start_cells))]
        return GridWorldState(
            pos=pos,
            task_id=task,
            exposure=exposure,
            step_in_episode=0,
            slip_p=self._slip_p,
            goals={"green": self.green, "yellow": self.yellow},
        )

    def step(self, state: GridWorldState, action: int) -> tuple[GridWorldState, StepOutcome]:
        action = Action(action)
        if self.cfg.slip_refresh_interval > 0 and (
            self.global_step % self.cfg.slip_refresh_interval == 0
        ):
            self._refresh_slip()
        slip_p = self._slip_p

        slipped = bool(self.rng.random() < slip_p)
        if slipped:
            # Uniform over the three other moves.
            alt = int(self.rng.integers(N_ACTIONS - 1))
            executed = Action(alt if alt < action else alt + 1)
        else:
            executed = action

        dr, dc = _DELTAS[executed]
        nr, nc = state.pos[0] + dr, state.pos[1] + dc
        if self.walls[nr, nc]:
            nr, nc = state.pos  # bumping a wall is a no-op
        new_pos = (nr, nc)

        reward = 0.0
        at_goal = False
        if new_pos == self.green:
            reward = 1.0 if state.task_id is TaskId.TASK1 else -1.0
            at_goal = True
        elif new_pos == self.yellow:
            reward = -1.0 if state.task_id is TaskId.TASK1 else 1.0
            at_goal = True

        step_in_episode = state.step_in_episode + 1
        done = at_goal or step_in_episode >= self.cfg.episode_cap

        self.global_step += 1
        task, exposure = schedule_lookup(self.cfg, self.global_step)
        new_state = GridWorldState(
            pos=new_pos,
            task_id=task,
            exposure=exposure,
            step_in_episode=step_in_episode,
            slip_p=slip_p,
            goals=state.goals,
        )
        outcome = StepOutcome(
            next_obs=self.feature_obs(new_state),
            reward=reward,
            done=done,
            executed_action=executed,
            slip_occurred=slipped,
        )
        return new_state, outcome

    def feature_obs(self, state: GridWorldState) -> np.ndarray:
        return feature_obs(state, self.n_rows, self.n_cols)

    @property
    def obs_dim(self) -> int:
        return self.n_rows * self.n_cols + 2

    def reachable_from_everywhere(self) -> bool:
        """BFS sanity check: both boxes reachable from every free cell."""
        for goal in (self.green, self.yellow):
            seen = {goal}
            frontier = deque([goal])
            while frontier:
                r, c = frontier.popleft()
                for dr, dc in _DELTAS:
                    nxt = (r + dr, c + dc)
                    if nxt not in seen and not self.walls[nxt]:
                        seen.add(nxt)
                        frontier.append(nxt)
            if any(cell not in seen for cell in self.free_cells):
                return False
        return True


def feature_obs(state: GridWorldState, n_rows: int = 13, n_cols: int = 13) -> np.ndarray:
    """One-hot position plus two always-zero goal-presence flags.

    The flags stay zero in both tasks: the agent must infer the active
    reward mapping from reward alone.
    """
    out = np.zeros(n_rows * n_cols + 2)
    out[state.pos[0] * n_cols + state.pos[1]] = 1.0
    return out
