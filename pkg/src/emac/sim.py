"""Gridworld simulator for multi-agent coverage of an unknown environment.

Cells are addressed ``(row, col)`` with row 0 at the north edge. Terrain is
a boolean grid (``True`` = obstacle); coverage is a boolean grid of cells
that some agent's sensor has seen. Sensors see over obstacles, so obstacle
cells become covered once inside a footprint, and the episode is complete
only when every cell of the map is covered.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .config import DisturbanceConfig, RewardConfig, WorldConfig


class WorldGenerationError(RuntimeError):
    pass


class ContractViolation(ValueError):
    pass


class InvariantViolation(AssertionError):
    pass


class Action(IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7
    NO_MOVE = 8


# (drow, dcol); indices 0..7 run clockwise so ring neighbours are i +/- 1 mod 8
DELTAS = np.array([(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (0, 0)])
N_ACTIONS = len(Action)
MOVES = [a for a in Action if a != Action.NO_MOVE]

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class AgentState:
    id: int
    position: tuple[int, int]
    sensor_k: int
    active: bool = True
    last_action: Action = Action.NO_MOVE


@dataclass
class RewardVector:
    """Per-agent rewards split into their five components."""

    terminal: np.ndarray
    progress: np.ndarray
    discovery: np.ndarray
    visitation: np.ndarray
    collision: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.terminal + self.progress + self.discovery + self.visitation + self.collision

    def components(self, i: int) -> dict[str, float]:
        return {
            "terminal": float(self.terminal[i]),
            "progress": float(self.progress[i]),
            "discovery": float(self.discovery[i]),
            "visitation": float(self.visitation[i]),
            "collision": float(self.collision[i]),
        }


@dataclass
class World:
    config: WorldConfig
    rewards: RewardConfig
    factors: DisturbanceConfig
    seed: int
    terrain: np.ndarray
    coverage: np.ndarray
    agents: list[AgentState]
    rng: np.random.Generator
    t: int = 0
    collision_mode: str = "no_move"
    # running total of newly covered cells, for telescoping checks
    progress_cells: int = field(default=0)

    @property
    def size(self) -> int:
        return self.terrain.shape[0]

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def coverage_fraction(self) -> float:
        return float(self.coverage.sum()) / self.coverage.size

    def active_ids(self) -> list[int]:
        return [a.id for a in self.agents if a.active]

    def copy(self) -> World:
        return copy.deepcopy(self)

    def same_state(self, other: World) -> bool:
        return (
            self.t == other.t
            and np.array_equal(self.terrain, other.terrain)
            and np.array_equal(self.coverage, other.coverage)
            and [(a.position, a.active, a.last_action, a.sensor_k) for a in self.agents]
            == [(a.position, a.active, a.last_action, a.sensor_k) for a in other.agents]
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


def footprint_bounds(position: tuple[int, int], k: int, size: int) -> tuple[int, int, int, int]:
    """Half-open ``(r0, r1, c0, c1)`` box of the clipped k x k footprint."""
    h = (k - 1) // 2
    r, c = position
    return max(r - h, 0), min(r + h + 1, size), max(c - h, 0), min(c + h + 1, size)


def sensor_footprint(position: tuple[int, int], k: int, size: int) -> set[tuple[int, int]]:
    r0, r1, c0, c1 = footprint_bounds(position, k, size)
    return {(r, c) for r in range(r0, r1) for c in range(c0, c1)}


def free_connected(terrain: np.ndarray) -> bool:
    free = ~terrain
    if not free.any():
        return False
    _, n_components = ndimage.label(free, structure=_EIGHT)
    return n_components == 1


def coverable(terrain: np.ndarray, k: int) -> bool:
    """True when every cell lies inside the footprint of some Free cell."""
    h = (k - 1) // 2
    if h == 0:
        return not terrain.any()
    reach = ndimage.binary_dilation(~terrain, structure=np.ones((2 * h + 1, 2 * h + 1), dtype=bool))
    return bool(reach.all())


def generate_world(
    seed: int,
    config: WorldConfig,
    rewards: RewardConfig | None = None,
    factors: DisturbanceConfig | None = None,
    collision_mode: str | None = None,
) -> World:
    """Build a random world; identical ``(seed, config)`` give identical worlds.

    Obstacle layouts are rejection-sampled until the Free cells are
    8-connected and every cell can be sensed by the smallest sensor.
    """
    m = config.size
    n_cells = m * m
    n_obstacles = int(np.floor(config.obstacle_density * n_cells + 0.5))
    if config.n_agents > n_cells - n_obstacles:
        raise WorldGenerationError(
            f"{config.n_agents} agents do not fit on {n_cells - n_obstacles} free cells"
        )
    rng = np.random.default_rng(seed)
    min_k = min(config.sensor_k)
    for _ in range(config.max_generation_attempts):
        terrain = np.zeros(n_cells, dtype=bool)
        if n_obstacles:
            terrain[rng.choice(n_cells, size=n_obstacles, replace=False)] = True
        terrain = terrain.reshape(m, m)
        if free_connected(terrain) and coverable(terrain, min_k):
            break
    else:
        raise WorldGenerationError(
            f"no connected map found in {config.max_generation_attempts} attempts "
            f"(density {config.obstacle_density})"
        )
    free_cells = np.flatnonzero(~terrain.ravel())
    starts = rng.choice(free_cells, size=config.n_agents, replace=False)
    agents = [
        AgentState(id=i, position=(int(s // m), int(s % m)), sensor_k=config.sensor_k[i])
        for i, s in enumerate(starts)
    ]
    coverage = np.zeros((m, m), dtype=bool)
    for a in agents:
        r0, r1, c0, c1 = footprint_bounds(a.position, a.sensor_k, m)
        coverage[r0:r1, c0:c1] = True
    return World(
        config=config,
        rewards=rewards or RewardConfig(),
        factors=factors or DisturbanceConfig(),
        seed=seed,
        terrain=terrain,
        coverage=coverage,
        agents=agents,
        rng=rng,
        collision_mode=collision_mode or config.collision_mode,
    )


def apply_wind(action: Action, wind_prob: float, rng: np.random.Generator) -> Action:
    """With probability ``wind_prob`` swap a move for one of its two compass neighbours."""
    if action == Action.NO_MOVE or wind_prob <= 0.0:
        return Action(action)
    if rng.random() >= wind_prob:
        return Action(action)
    step = 1 if rng.random() < 0.5 else -1
    return Action((int(action) + step) % 8)


def apply_dropout(world: World, p: float, min_agents: int, rng: np.random.Generator) -> World:
    """Drop active agents independently with probability ``p``, never going below ``min_agents``."""
    if p <= 0.0:
        return world
    n_active = sum(a.active for a in world.agents)
    for agent in world.agents:
        if not agent.active:
            continue
        if n_active <= min_agents:
            break
        if rng.random() < p:
            agent.active = False
            n_active -= 1
    return world


def compute_rewards(
    coverage_before: np.ndarray,
    coverage_after: np.ndarray,
    per_agent_new_cells,
    collisions,
    done_by_coverage: bool,
    rewards: RewardConfig | None = None,
    acting=None,
) -> RewardVector:
    """Team terminal and progress rewards plus individual discovery, visit and collision terms.

    ``acting`` masks agents that were inactive for the whole step; they
    receive zero in every component.
    """
    rewards = rewards or RewardConfig()
    if np.any(coverage_before & ~coverage_after):
        raise InvariantViolation("coverage_after lost a cell that was covered before")
    n = len(per_agent_new_cells)
    new_cells = np.asarray(per_agent_new_cells)
    hit = np.asarray(collisions, dtype=bool)
    mask = np.ones(n, dtype=bool) if acting is None else np.asarray(acting, dtype=bool)
    newly = int(coverage_after.sum() - coverage_before.sum())
    team_progress = rewards.progress * newly / coverage_after.size
    return RewardVector(
        terminal=np.where(mask & bool(done_by_coverage), rewards.terminal, 0.0),
        progress=np.where(mask, team_progress, 0.0),
        discovery=np.where(mask & (new_cells > 0), rewards.discovery, 0.0),
        visitation=np.where(mask & (new_cells == 0), -rewards.visit, 0.0),
        collision=np.where(mask & hit, -rewards.collision, 0.0),
    )


def _resolve_moves(world: World, actions: list[Action]):
    """Return (final positions, collided flags) for the active agents."""
    m = world.size
    n = world.n_agents
    active = [a.active for a in world.agents]
    pos = [a.position for a in world.agents]
    target = list(pos)
    moving = [False] * n
    collided = [False] * n
    for i, agent in enumerate(world.agents):
        if not active[i] or actions[i] == Action.NO_MOVE:
            continue
        dr, dc = DELTAS[actions[i]]
        r, c = pos[i][0] + dr, pos[i][1] + dc
        if not (0 <= r < m and 0 <= c < m) or world.terrain[r, c]:
            collided[i] = True
            continue
        target[i] = (int(r), int(c))
        moving[i] = True

    deactivate = world.collision_mode == "deactivate"
    blocked = [False] * n
    live = [i for i in range(n) if active[i]]

    def first_conflict(final, go):
        for x, i in enumerate(live):
            for j in live[x + 1:]:
                if final[i] == final[j]:
                    return i, j, "shared"
                if go[i] and go[j] and target[i] == pos[j] and target[j] == pos[i]:
                    return i, j, "swap"
        return None

    # each pass blocks at least one mover, so this terminates
    while True:
        go = [moving[i] and not blocked[i] for i in range(n)]
        final = [target[i] if go[i] else pos[i] for i in range(n)]
        conflict = first_conflict(final, go)
        if conflict is None:
            return final, collided
        i, j, kind = conflict
        if kind == "swap" or (go[i] and go[j]):
            collided[i] = collided[j] = True
            blocked[j] = True
            # contested cell: lower index keeps it unless colliders are removed
            if kind == "swap" or deactivate:
                blocked[i] = True
        elif go[i]:
            collided[i] = blocked[i] = True
        elif go[j]:
            collided[j] = blocked[j] = True
        else:
            raise InvariantViolation(f"agents {i} and {j} already share cell {pos[i]}")


def step(world: World, joint_action) -> tuple[World, RewardVector, bool, dict]:
    """Advance the world one step in place.

    Order: wind, dropout, target cells, collision resolution, movement,
    coverage, rewards, clock. Collisions become no-moves; in
    ``deactivate`` mode the colliding agent is also switched off.
    """
    if len(joint_action) != world.n_agents:
        raise ContractViolation(f"expected {world.n_agents} actions, got {len(joint_action)}")
    factors = world.factors
    acting_before = [a.active for a in world.agents]
    intended = [Action(int(u)) for u in joint_action]
    actions = [
        apply_wind(u, factors.wind_prob, world.rng) if a.active else Action.NO_MOVE
        for u, a in zip(intended, world.agents)
    ]
    apply_dropout(world, factors.dropout_prob, factors.dropout_min_agents, world.rng)
    dropped = [b and not a.active for b, a in zip(acting_before, world.agents)]

    final, collided = _resolve_moves(world, actions)
    m = world.size
    before = world.coverage.copy()
    new_cells = [0] * world.n_agents
    for i, agent in enumerate(world.agents):
        if not agent.active:
            continue
        moved = final[i] != agent.position
        agent.position = final[i]
        agent.last_action = actions[i] if moved else Action.NO_MOVE
        if collided[i] and world.collision_mode == "deactivate":
            agent.active = False
            continue
        r0, r1, c0, c1 = footprint_bounds(agent.position, agent.sensor_k, m)
        new_cells[i] = int((~before[r0:r1, c0:c1]).sum())
        world.coverage[r0:r1, c0:c1] = True

    done_by_coverage = bool(world.coverage.all())
    reward = compute_rewards(
        before, world.coverage, new_cells, collided, done_by_coverage, world.rewards, acting=acting_before
    )
    world.progress_cells += int(world.coverage.sum() - before.sum())
    world.t += 1
    any_active = any(a.active for a in world.agents)
    done = done_by_coverage or world.t >= world.config.timeout or not any_active
    info = {
        "intended": intended,
        "executed": [a.last_action for a in world.agents],
        "collisions": collided,
        "new_cells": new_cells,
        "dropped": dropped,
        "acting": acting_before,
        "done_by_coverage": done_by_coverage,
    }
    return world, reward, done, info
