import numpy as np
import pytest

from emac import config as C
from emac.observe import observation_length
from emac.rollout import TRAIN_SEED_BASE, EpisodeRecord, make_worlds, run_lockstep, training_seeds
from emac.trainer import (
    Optimizers,
    TrainingDiverged,
    act,
    assemble_batch,
    batched_selector,
    build_model,
    compute_returns,
    embed,
    policy_probs,
    sample_triplets,
    train,
    update,
)


def tiny_config(**train):
    return C.replace(
        C.desk_preset(),
        world={"size": 5, "n_agents": 2, "sensor_k": (3, 3), "timeout": 15},
        observation={"near_j": 3, "far_m": 3},
        network={"embed_dim": 8, "actor_hidden": (8,), "critic_hidden": (8,)},
        train={"n_envs": 2, "max_episodes": 3, "eval_interval": 0, "triplet_time_buffer": 2, **train},
    )


def fake_episode(n_agents, length, dim=4, drop=None):
    """Episode with distinguishable observations ``[agent, t, 0, 0]``."""
    ep = EpisodeRecord(n_agents)
    for t in range(length):
        obs = [None if drop and drop.get(i, length) <= t else np.array([i, t, 0, 0], dtype=float)
               for i in range(n_agents)]
        ep.obs.append(obs)
        ep.actions.append([0 if o is not None else None for o in obs])
        ep.rewards.append(np.ones(n_agents))
        ep.states.append(np.zeros(3))
    return ep


def test_model_shapes_heterogeneous():
    cfg = C.replace(C.paper_preset(), world={"sensor_k": (7, 9, 7)})
    model = build_model(cfg, np.random.default_rng(0))
    assert [e.in_dim for e in model.encoders] == [147, 179, 147]
    assert {e.out_dim for e in model.encoders} == {64}
    assert model.actor.sizes == [64, 64, 64, 9]
    assert model.critic.sizes == [768, 128, 128, 1]
    z7 = embed(model.encoders[0], np.zeros(147))
    z9 = embed(model.encoders[1], np.zeros(179))
    assert z7.shape == z9.shape == (64,)
    with pytest.raises(ValueError):
        embed(model.encoders[0], np.zeros(179))


def test_zero_encoder_gives_zero_embedding():
    model = build_model(tiny_config(), np.random.default_rng(0))
    enc = model.encoders[0]
    enc.weights[0][...] = 0
    enc.biases[0][...] = 0
    assert not embed(enc, np.ones(enc.in_dim)).any()


def test_returns_helper():
    np.testing.assert_allclose(compute_returns([1, 1, 1], 0.9), [2.71, 1.9, 1.0])


def test_assemble_batch_targets_are_agent_means():
    ep = fake_episode(2, 3, drop={1: 2})
    ep.rewards = [np.array([1.0, 3.0]), np.array([1.0, 3.0]), np.array([1.0, 0.0])]
    batch = assemble_batch([ep], 0.5, 2)
    r0 = compute_returns([1, 1, 1], 0.5)
    r1 = compute_returns([3, 3], 0.5)
    np.testing.assert_allclose(batch.critic_targets, [(r0[0] + r1[0]) / 2, (r0[1] + r1[1]) / 2, r0[2]])
    np.testing.assert_allclose(batch.returns[1], r1)
    assert batch.state_index[1].tolist() == [0, 1]


def test_triplet_sampler_validity():
    rng = np.random.default_rng(0)
    eps = [fake_episode(3, 20, drop={2: 12}), fake_episode(3, 8)]
    trips = sample_triplets(eps, 5, rng)
    assert trips
    for e, i, j, t, tn in trips:
        assert e == 0  # the 8-step episode is shorter than 2*5+1
        assert i != j
        assert abs(tn - t) > 5
        assert eps[e].obs[t][j] is not None and eps[e].obs[tn][i] is not None


def test_triplet_sampler_skips_short_episodes():
    assert sample_triplets([fake_episode(2, 10)], 5, np.random.default_rng(0)) == []


def test_single_update_steps_each_network_once():
    cfg = tiny_config()
    model = build_model(cfg, np.random.default_rng(0))
    optim = Optimizers(model.nets(), cfg.optimizer)
    worlds = make_worlds(cfg, [TRAIN_SEED_BASE + 1, TRAIN_SEED_BASE + 2])
    episodes = run_lockstep(worlds, cfg, batched_selector(model, np.random.default_rng(0)))
    before = {k: [p.copy() for p in n.parameters()] for k, n in model.nets().items()}
    update(model, optim, episodes, np.random.default_rng(0))
    assert optim.states["critic"].step == 1
    assert optim.states["actor"].step == 1
    for k, net in model.nets().items():
        assert any(not np.array_equal(a, b) for a, b in zip(before[k], net.parameters())), k


def test_train_one_episode_curve():
    model, curve = train(tiny_config(max_episodes=1))
    assert curve.episode == [0]
    assert len(curve.critic_loss) == 1


def test_training_is_deterministic():
    cfg = tiny_config()
    m1, c1 = train(cfg)
    m2, c2 = train(cfg)
    assert c1.mean_length == c2.mean_length
    assert c1.actor_loss == c2.actor_loss
    for a, b in zip(m1.actor.parameters(), m2.actor.parameters()):
        np.testing.assert_array_equal(a, b)


def test_training_seeds_are_disjoint_from_eval_seeds():
    seeds = training_seeds(np.random.default_rng(0), 100)
    assert min(seeds) >= TRAIN_SEED_BASE


def test_divergence_raises_with_checkpoint(tmp_path):
    cfg = tiny_config(max_episodes=1)
    cfg = C.replace(cfg, optimizer={"lr": float("nan")})
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, out_dir=tmp_path)
    assert info.value.checkpoint is not None and info.value.checkpoint.exists()


def test_greedy_dominant_logit():
    cfg = tiny_config()
    model = build_model(cfg, np.random.default_rng(0))
    model.actor.weights[-1][...] = 0
    model.actor.biases[-1][...] = 0
    model.actor.biases[-1][5] = 50.0
    obs = [np.random.default_rng(i).random(model.encoders[i].in_dim) for i in range(2)]
    rng = np.random.default_rng(0)
    assert all(act(model, obs, rng) == [5, 5] for _ in range(20))
    assert act(model, obs, rng, greedy=True) == [5, 5]


def test_execution_is_decentralised():
    cfg = tiny_config()
    model = build_model(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    dim = model.encoders[0].in_dim
    o0 = rng.random(dim)
    p_a = policy_probs(model, [o0, rng.random(dim)])[0]
    p_b = policy_probs(model, [o0, None])[0]
    np.testing.assert_array_equal(p_a, p_b)
    # same observation, shared actor, different encoders: the encoders decide
    both = policy_probs(model, [o0, o0])
    assert not np.allclose(both[0], both[1])
    assert dim == observation_length(3, 3, 3)
