import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emac.config import DisturbanceConfig, RewardConfig, WorldConfig
from emac.sim import (
    DELTAS,
    MOVES,
    Action,
    ContractViolation,
    InvariantViolation,
    WorldGenerationError,
    apply_dropout,
    apply_wind,
    compute_rewards,
    coverable,
    free_connected,
    generate_world,
    sensor_footprint,
    step,
)


def assert_exclusive(world):
    cells = [a.position for a in world.agents if a.active]
    assert len(set(cells)) == len(cells)
    for r, c in cells:
        assert 0 <= r < world.size and 0 <= c < world.size
        assert not world.terrain[r, c]


# world generation

def test_seed7_world_has_26_obstacles_and_distinct_agents():
    world = generate_world(7, WorldConfig(size=16, n_agents=3, sensor_k=(7, 7, 7), obstacle_density=0.10))
    assert world.terrain.sum() == 26
    cells = {a.position for a in world.agents}
    assert len(cells) == 3
    assert all(not world.terrain[c] for c in cells)
    assert world.t == 0
    assert free_connected(world.terrain)


def test_zero_density_has_no_obstacles():
    world = generate_world(3, WorldConfig(obstacle_density=0.0))
    assert not world.terrain.any()


def test_generation_is_deterministic():
    cfg = WorldConfig()
    a, b = generate_world(11, cfg), generate_world(11, cfg)
    assert a.same_state(b)


def test_generated_maps_are_connected_and_coverable():
    cfg = WorldConfig(size=10, n_agents=2, sensor_k=(3, 3), obstacle_density=0.25)
    for seed in range(20):
        world = generate_world(seed, cfg)
        assert free_connected(world.terrain)
        assert coverable(world.terrain, 3)


def test_generation_errors():
    with pytest.raises(WorldGenerationError):
        generate_world(0, WorldConfig(size=6, n_agents=1, sensor_k=(3,), obstacle_density=0.9,
                                      max_generation_attempts=20))
    with pytest.raises(WorldGenerationError):
        generate_world(0, WorldConfig(size=2, n_agents=5, sensor_k=(3,) * 5, obstacle_density=0.0))


def test_initial_coverage_is_union_of_footprints():
    world = generate_world(5, WorldConfig())
    expected = set()
    for a in world.agents:
        expected |= sensor_footprint(a.position, a.sensor_k, world.size)
    assert set(zip(*np.nonzero(world.coverage))) == expected


# footprint

def test_footprint_sizes():
    assert len(sensor_footprint((8, 8), 7, 16)) == 49
    corner = sensor_footprint((0, 0), 7, 16)
    assert corner == {(r, c) for r in range(4) for c in range(4)}
    assert sensor_footprint((4, 9), 1, 16) == {(4, 9)}


# step

def test_boundary_collision_under_no_move(make_world):
    world = make_world(16, [(0, 0)])
    _, reward, _, info = step(world, [Action.N])
    assert world.agents[0].position == (0, 0)
    assert info["collisions"] == [True]
    assert reward.collision[0] == -0.5
    assert world.agents[0].active


def test_boundary_collision_under_deactivate(make_world):
    world = make_world(16, [(0, 0), (8, 8)], mode="deactivate")
    _, reward, done, _ = step(world, [Action.N, Action.NO_MOVE])
    assert not world.agents[0].active
    assert reward.collision[0] == -0.5
    assert world.agents[1].active and not done


def test_obstacle_collision(make_world):
    terrain = np.zeros((5, 5), dtype=bool)
    terrain[1, 2] = True
    world = make_world(5, [(2, 2)], terrain=terrain)
    _, reward, _, info = step(world, [Action.N])
    assert world.agents[0].position == (2, 2)
    assert info["collisions"] == [True]


def test_fully_covered_world_finishes_at_once(make_world):
    world = make_world(3, [(1, 1)])
    assert world.coverage.all()
    _, reward, done, _ = step(world, [Action.NO_MOVE])
    assert done
    assert reward.terminal[0] == 10.0


def test_wrong_action_count(make_world):
    world = make_world(5, [(0, 0), (4, 4)])
    with pytest.raises(ContractViolation):
        step(world, [Action.N])


def test_timeout_and_all_inactive_end_episode(make_world):
    world = make_world(16, [(8, 8)], timeout=2)
    assert not step(world, [Action.NO_MOVE])[2]
    assert step(world, [Action.NO_MOVE])[2]
    world = make_world(16, [(0, 0)], mode="deactivate")
    assert step(world, [Action.N])[2]


def test_new_cells_and_last_action(make_world):
    world = make_world(16, [(8, 8)], ks=[3])
    _, reward, _, info = step(world, [Action.E])
    assert info["new_cells"] == [3]
    assert world.agents[0].last_action == Action.E
    assert reward.discovery[0] == 0.1
    step(world, [Action.W])
    assert world.agents[0].last_action == Action.W


@pytest.mark.parametrize("mode", ["no_move", "deactivate"])
def test_occupancy_exclusion_all_81_joint_actions(make_world, mode):
    for a, b in itertools.product(Action, Action):
        world = make_world(5, [(2, 2), (2, 3)], mode=mode)
        _, reward, _, info = step(world, [a, b])
        assert_exclusive(world)
        for i, agent in enumerate(world.agents):
            if info["collisions"][i]:
                assert reward.collision[i] == -0.5
                # only the lower index may still take a contested cell, and only under no_move
                if i == 1 or mode == "deactivate":
                    assert agent.position == [(2, 2), (2, 3)][i]


def test_contested_cell_goes_to_lower_index_under_no_move(make_world):
    world = make_world(7, [(3, 2), (3, 4)])
    _, reward, _, info = step(world, [Action.E, Action.W])
    assert world.agents[0].position == (3, 3)
    assert world.agents[1].position == (3, 4)
    assert info["collisions"] == [True, True]


def test_contested_cell_under_deactivate_removes_both(make_world):
    world = make_world(7, [(3, 2), (3, 4), (0, 0)], mode="deactivate")
    step(world, [Action.E, Action.W, Action.NO_MOVE])
    assert [a.active for a in world.agents] == [False, False, True]
    assert world.agents[0].position == (3, 2)


def test_swap_is_a_collision(make_world):
    world = make_world(5, [(2, 2), (2, 3)])
    _, _, _, info = step(world, [Action.E, Action.W])
    assert info["collisions"] == [True, True]
    assert [a.position for a in world.agents] == [(2, 2), (2, 3)]


def test_following_into_vacated_cell_is_allowed(make_world):
    world = make_world(6, [(2, 1), (2, 2)])
    _, _, _, info = step(world, [Action.E, Action.E])
    assert info["collisions"] == [False, False]
    assert [a.position for a in world.agents] == [(2, 2), (2, 3)]


def test_moving_into_a_blocked_agent_is_a_collision(make_world):
    world = make_world(6, [(2, 1), (2, 2)])
    _, _, _, info = step(world, [Action.E, Action.NO_MOVE])
    assert info["collisions"] == [True, False]
    assert world.agents[0].position == (2, 1)


def test_chain_blocked_by_wall_cascades(make_world):
    world = make_world(4, [(0, 2), (0, 3)])
    _, _, _, info = step(world, [Action.E, Action.E])
    assert info["collisions"] == [True, True]
    assert [a.position for a in world.agents] == [(0, 2), (0, 3)]


def test_inactive_agents_do_not_block_or_act(make_world):
    world = make_world(6, [(2, 1), (2, 2)])
    world.agents[1].active = False
    _, reward, _, info = step(world, [Action.E, Action.E])
    assert world.agents[0].position == (2, 2)
    assert world.agents[1].position == (2, 2)
    assert reward.total[1] == 0.0


# rewards

def test_progress_and_discovery_example():
    before = np.zeros((16, 16), dtype=bool)
    after = before.copy()
    after[0:7, 0:7] = True
    r = compute_rewards(before, after, [49, 0], [False, False], False)
    assert r.progress[0] == pytest.approx(49 / 256)
    assert r.discovery[0] == pytest.approx(0.1)
    assert r.visitation[0] == 0.0
    assert r.total[0] == pytest.approx(49 / 256 + 0.1)
    # the team progress term is shared
    assert r.progress[1] == pytest.approx(49 / 256)


def test_no_new_cells_costs_exactly_visit():
    cov = np.zeros((4, 4), dtype=bool)
    r = compute_rewards(cov, cov, [0], [False], False)
    assert r.total[0] == -0.05


def test_terminal_reward_is_shared():
    before = np.ones((4, 4), dtype=bool)
    before[0, 0] = False
    after = np.ones((4, 4), dtype=bool)
    r = compute_rewards(before, after, [1, 0, 0], [False] * 3, True)
    assert np.all(r.terminal == 10.0)


def test_reward_coefficients_are_configurable():
    cov = np.zeros((4, 4), dtype=bool)
    r = compute_rewards(cov, cov, [0], [True], False, RewardConfig(visit=0.2, collision=2.0))
    assert r.visitation[0] == -0.2
    assert r.collision[0] == -2.0


def test_lost_coverage_is_an_invariant_violation():
    before = np.ones((3, 3), dtype=bool)
    after = before.copy()
    after[1, 1] = False
    with pytest.raises(InvariantViolation):
        compute_rewards(before, after, [0], [False], False)


# wind and dropout

def test_wind_zero_and_no_move():
    rng = np.random.default_rng(0)
    assert apply_wind(Action.N, 0.0, rng) == Action.N
    assert all(apply_wind(Action.NO_MOVE, 1.0, rng) == Action.NO_MOVE for _ in range(100))


def test_wind_splits_evenly_between_neighbours():
    rng = np.random.default_rng(0)
    draws = [apply_wind(Action.N, 1.0, rng) for _ in range(10_000)]
    assert set(draws) == {Action.NE, Action.NW}
    assert abs(draws.count(Action.NE) / 10_000 - 0.5) <= 0.02


@pytest.mark.parametrize("action", MOVES)
def test_wind_locality(action):
    rng = np.random.default_rng(int(action))
    neighbours = {action, Action((action + 1) % 8), Action((action - 1) % 8)}
    for p in (0.1, 0.5, 1.0):
        assert {apply_wind(action, p, rng) for _ in range(500)} <= neighbours
    # ring neighbours are exactly one 45 degree turn away
    for n in neighbours - {action}:
        assert np.abs(DELTAS[n] - DELTAS[action]).sum() == 1


def test_dropout_examples(make_world):
    rng = np.random.default_rng(0)
    world = make_world(8, [(0, 0), (4, 4), (7, 7)])
    apply_dropout(world, 0.0, 1, rng)
    assert len(world.active_ids()) == 3
    apply_dropout(world, 1.0, 1, rng)
    assert len(world.active_ids()) == 1
    apply_dropout(world, 1.0, 1, rng)
    assert len(world.active_ids()) == 1


def test_dropout_floor_holds_through_episodes():
    factors = DisturbanceConfig(dropout_prob=0.3, dropout_min_agents=2)
    cfg = WorldConfig(size=10, n_agents=4, sensor_k=(3,) * 4)
    rng = np.random.default_rng(1)
    for seed in range(10):
        world = generate_world(seed, cfg, factors=factors)
        done = False
        while not done:
            _, _, done, _ = step(world, rng.integers(0, 9, size=4).tolist())
            assert len(world.active_ids()) >= 2


# properties over random episodes

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["no_move", "deactivate"]),
       wind=st.sampled_from([0.0, 0.3]), k=st.sampled_from([3, 5]))
def test_monotone_coverage_telescoping_and_exclusion(seed, mode, wind, k):
    cfg = WorldConfig(size=8, n_agents=3, sensor_k=(k, 3, k), obstacle_density=0.15, timeout=40,
                      collision_mode=mode)
    world = generate_world(seed, cfg, factors=DisturbanceConfig(wind_prob=wind))
    rng = np.random.default_rng(seed)
    initial = world.coverage_fraction
    progress_sum = 0.0
    newly_total = 0
    done = False
    while not done:
        before = world.coverage.copy()
        acting = [a.active for a in world.agents]
        _, reward, done, info = step(world, rng.integers(0, 9, size=3).tolist())
        assert np.all(world.coverage >= before)
        newly = int(world.coverage.sum() - before.sum())
        newly_total += newly
        assert_exclusive(world)
        first = next((i for i, a in enumerate(acting) if a), None)
        if first is not None:
            progress_sum += reward.progress[first]
            assert reward.progress[first] == pytest.approx(newly / 64)
    assert newly_total == world.progress_cells
    assert world.coverage.sum() - round(initial * 64) == newly_total
    assert progress_sum == pytest.approx(world.coverage_fraction - initial)


def test_trajectories_are_deterministic():
    cfg = WorldConfig(size=10, n_agents=2, sensor_k=(3, 3))
    factors = DisturbanceConfig(wind_prob=0.4, dropout_prob=0.05)
    actions = np.random.default_rng(0).integers(0, 9, size=(60, 2)).tolist()
    a, b = generate_world(4, cfg, factors=factors), generate_world(4, cfg, factors=factors)
    for joint in actions:
        step(a, joint)
        step(b, joint)
        assert a.same_state(b)
