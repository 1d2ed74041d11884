import numpy as np
import pytest

from emac.config import DisturbanceConfig, RewardConfig, WorldConfig
from emac.sim import AgentState, World, footprint_bounds


def build_world(size, positions, ks=None, terrain=None, mode="no_move", factors=None, rewards=None, seed=0,
                timeout=100):
    """Hand-built world with agents at ``positions``; coverage starts as their footprints."""
    ks = tuple(ks or [3] * len(positions))
    terrain = np.zeros((size, size), dtype=bool) if terrain is None else np.asarray(terrain, dtype=bool)
    cfg = WorldConfig(size=size, n_agents=len(positions), sensor_k=ks, obstacle_density=0.0,
                      timeout=timeout, collision_mode=mode)
    agents = [AgentState(id=i, position=tuple(p), sensor_k=k) for i, (p, k) in enumerate(zip(positions, ks))]
    coverage = np.zeros((size, size), dtype=bool)
    for a in agents:
        r0, r1, c0, c1 = footprint_bounds(a.position, a.sensor_k, size)
        coverage[r0:r1, c0:c1] = True
    return World(config=cfg, rewards=rewards or RewardConfig(), factors=factors or DisturbanceConfig(),
                 seed=seed, terrain=terrain, coverage=coverage, agents=agents,
                 rng=np.random.default_rng(seed), collision_mode=mode)


@pytest.fixture
def make_world():
    return build_world


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; returns the pass flag."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
