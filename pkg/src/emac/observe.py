"""Per-agent partial observations.

An observation is the flat concatenation, in this order, of

* the k x k sensed terrain patch (obstacle = 1, off-map = 1),
* the j x j near-field visit patch from the agent's belief map,
* the m x m far-field visit map: a (2M-1)-wide egocentric window of the
  belief map, adaptively average-pooled to m x m (off-map = 1),
* a one-hot of the agent's last action.

Every entry lies in [0, 1]. Heterogeneous agents differ only in k.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import ObservationConfig
from .sim import N_ACTIONS, AgentState, World, footprint_bounds

OFF_MAP = 1.0


def observation_length(k: int, j: int, m: int) -> int:
    return k * k + j * j + m * m + N_ACTIONS


def ego_window(grid: np.ndarray, center: tuple[int, int], width: int, pad: float = OFF_MAP) -> np.ndarray:
    """``width x width`` float patch of ``grid`` centred on ``center``, padded off-map."""
    size = grid.shape[0]
    half = width // 2
    out = np.full((width, width), pad, dtype=np.float32)
    r0, c0 = center[0] - half, center[1] - half
    gr0, gr1 = max(r0, 0), min(r0 + width, size)
    gc0, gc1 = max(c0, 0), min(c0 + width, size)
    if gr0 < gr1 and gc0 < gc1:
        out[gr0 - r0:gr1 - r0, gc0 - c0:gc1 - c0] = grid[gr0:gr1, gc0:gc1]
    return out


@lru_cache(maxsize=None)
def pool_bins(width: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin ``a`` spans ``[floor(a*W/m), floor((a+1)*W/m))``; empty bins (m > W) take one cell."""
    a = np.arange(m)
    starts = (a * width) // m
    ends = ((a + 1) * width) // m
    ends = np.maximum(ends, starts + 1)
    return starts, ends


def adaptive_avg_pool(x: np.ndarray, m: int) -> np.ndarray:
    width = x.shape[0]
    starts, ends = pool_bins(width, m)
    integral = np.zeros((width + 1, width + 1), dtype=np.float64)
    integral[1:, 1:] = x.cumsum(0).cumsum(1)
    rs, re = starts[:, None], ends[:, None]
    cs, ce = starts[None, :], ends[None, :]
    sums = integral[re, ce] - integral[rs, ce] - integral[re, cs] + integral[rs, cs]
    counts = (re - rs) * (ce - cs)
    return (sums / counts).astype(np.float32)


@dataclass
class BeliefCoverage:
    """What one agent believes has been covered, given delayed teammate messages."""

    owner: int
    believed: np.ndarray
    # (sender, footprint box, send time)
    inbox: deque = field(default_factory=deque)

    @classmethod
    def empty(cls, owner: int, size: int) -> BeliefCoverage:
        return cls(owner=owner, believed=np.zeros((size, size), dtype=bool))


def update_belief(belief: BeliefCoverage, world: World, comm_delay_steps: int) -> BeliefCoverage:
    """Apply the owner's own footprint now and teammates' footprints ``comm_delay_steps`` later.

    Call once at reset and once after every environment step. Inactive
    teammates send nothing.
    """
    m = world.size
    owner = world.agents[belief.owner]
    if owner.active:
        r0, r1, c0, c1 = footprint_bounds(owner.position, owner.sensor_k, m)
        belief.believed[r0:r1, c0:c1] = True
    for mate in world.agents:
        if mate.id != belief.owner and mate.active:
            belief.inbox.append((mate.id, footprint_bounds(mate.position, mate.sensor_k, m), world.t))
    while belief.inbox and belief.inbox[0][2] + comm_delay_steps <= world.t:
        _, (r0, r1, c0, c1), _ = belief.inbox.popleft()
        belief.believed[r0:r1, c0:c1] = True
    return belief


def sense_terrain(world: World, agent: AgentState) -> np.ndarray:
    return ego_window(world.terrain, agent.position, agent.sensor_k)


def near_field_visits(believed: np.ndarray, agent: AgentState, j: int) -> np.ndarray:
    return ego_window(believed, agent.position, j)


def far_field_visits(believed: np.ndarray, agent: AgentState, m: int) -> np.ndarray:
    size = believed.shape[0]
    if not 1 <= m <= 2 * size:
        raise ValueError(f"far-field size m={m} outside [1, {2 * size}]")
    window = ego_window(believed, agent.position, 2 * size - 1)
    return adaptive_avg_pool(window, m)


def build_observation(world: World, believed: np.ndarray, agent: AgentState, obs_cfg: ObservationConfig) -> np.ndarray:
    one_hot = np.zeros(N_ACTIONS, dtype=np.float32)
    one_hot[int(agent.last_action)] = 1.0
    return np.concatenate([
        sense_terrain(world, agent).ravel(),
        near_field_visits(believed, agent, obs_cfg.near_j).ravel(),
        far_field_visits(believed, agent, obs_cfg.far_m).ravel(),
        one_hot,
    ])


def global_state(world: World) -> np.ndarray:
    """Terrain, coverage and active-agent occupancy grids, flattened: length 3M^2."""
    occupancy = np.zeros_like(world.terrain)
    for a in world.agents:
        if a.active:
            occupancy[a.position] = True
    return np.concatenate([world.terrain.ravel(), world.coverage.ravel(), occupancy.ravel()]).astype(np.float32)


class Observer:
    """Keeps every agent's belief map in sync with a world and builds observations."""

    def __init__(self, obs_cfg: ObservationConfig, comm_delay_steps: int = 0):
        self.obs_cfg = obs_cfg
        self.delay = comm_delay_steps
        self.beliefs: list[BeliefCoverage] = []

    def reset(self, world: World) -> list[np.ndarray | None]:
        self.beliefs = [BeliefCoverage.empty(a.id, world.size) for a in world.agents]
        return self.update(world)

    def update(self, world: World) -> list[np.ndarray | None]:
        """Refresh beliefs after a step; returns observations (``None`` for inactive agents)."""
        if self.delay > 0:
            for belief in self.beliefs:
                update_belief(belief, world, self.delay)
        return [
            build_observation(world, self.believed(a.id, world), a, self.obs_cfg) if a.active else None
            for a in world.agents
        ]

    def believed(self, agent_id: int, world: World) -> np.ndarray:
        # without delay every belief equals the true coverage map
        if self.delay == 0:
            return world.coverage
        return self.beliefs[agent_id].believed
