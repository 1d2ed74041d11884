"""Lockstep rollouts over several environments and the per-episode buffer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import RunConfig
from .observe import Observer, global_state
from .sim import Action, World, generate_world, step

# training worlds use seeds at or above this; evaluation seeds stay below it
TRAIN_SEED_BASE = 1 << 32


@dataclass
class EpisodeRecord:
    """One environment's episode: per step, per agent ``(o, u, r)`` plus the global state."""

    n_agents: int
    obs: list[list[np.ndarray | None]] = field(default_factory=list)
    actions: list[list[int | None]] = field(default_factory=list)
    rewards: list[np.ndarray] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    next_obs: list[list[np.ndarray | None]] = field(default_factory=list)
    terminal: list[bool] = field(default_factory=list)
    coverage: float = 0.0
    completed: bool = False

    def __len__(self) -> int:
        return len(self.rewards)

    def agent_steps(self, i: int) -> list[int]:
        return [t for t, o in enumerate(self.obs) if o[i] is not None]


class TrajectoryBuffer:
    """Episodes from E parallel environments, filled before each update and then cleared."""

    def __init__(self):
        self.episodes: list[EpisodeRecord] = []

    def extend(self, episodes) -> None:
        self.episodes.extend(episodes)

    def clear(self) -> None:
        self.episodes.clear()

    def __len__(self) -> int:
        return len(self.episodes)


def make_worlds(cfg: RunConfig, seeds, collision_mode: str | None = None) -> list[World]:
    return [
        generate_world(int(s), cfg.world, cfg.rewards, cfg.disturbances, collision_mode=collision_mode)
        for s in seeds
    ]


def training_seeds(rng: np.random.Generator, count: int) -> list[int]:
    return [TRAIN_SEED_BASE + int(s) for s in rng.integers(0, 2**31, size=count)]


SelectFn = Callable[[list[list[np.ndarray | None]]], list[list[int]]]


def run_lockstep(
    worlds: list[World],
    cfg: RunConfig,
    select: SelectFn,
    record: bool = True,
    record_states: bool = True,
    record_next: bool = False,
    on_step: Callable | None = None,
) -> list[EpisodeRecord]:
    """Step all worlds together until every one is done.

    ``select`` receives the observation lists of the still-running worlds
    and returns one action list per world. ``on_step(e, world, actions,
    reward, info)`` is called after each individual step.
    """
    observers = [Observer(cfg.observation, cfg.disturbances.comm_delay_steps) for _ in worlds]
    obs = [ob.reset(w) for ob, w in zip(observers, worlds)]
    records = [EpisodeRecord(w.n_agents) for w in worlds]
    done = [False] * len(worlds)
    while not all(done):
        live = [e for e in range(len(worlds)) if not done[e]]
        chosen = select([obs[e] for e in live])
        for e, actions in zip(live, chosen):
            world = worlds[e]
            state = global_state(world) if record and record_states else None
            acts = [int(a) if o is not None else int(Action.NO_MOVE) for a, o in zip(actions, obs[e])]
            _, reward, finished, info = step(world, acts)
            new_obs = observers[e].update(world)
            if record:
                rec = records[e]
                rec.obs.append(obs[e])
                rec.actions.append([a if o is not None else None for a, o in zip(acts, obs[e])])
                rec.rewards.append(reward.total)
                rec.states.append(state)
                rec.terminal.append(info["done_by_coverage"])
                if record_next:
                    rec.next_obs.append(new_obs)
            if on_step is not None:
                on_step(e, world, acts, reward, info)
            obs[e] = new_obs
            done[e] = finished
    for rec, w in zip(records, worlds):
        rec.coverage = w.coverage_fraction
        rec.completed = bool(w.coverage.all())
    return records
