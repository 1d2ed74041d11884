"""Independent Q-learning: one DQN-style learner per agent on its own observations."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import losses
from ..config import RunConfig
from ..evaluation import Policy
from ..nn import AdamState, DenseNet, NonFiniteError, adam_step, backward, forward
from ..observe import observation_length
from ..rollout import EpisodeRecord, make_worlds, run_lockstep, training_seeds
from ..sim import N_ACTIONS, Action
from ..trainer import TrainingCurve, TrainingDiverged

log = logging.getLogger(__name__)


class ReplayBuffer:
    """Fixed-capacity ring buffer of ``(o, u, r, o', done)`` transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, o, u, r, o2, done) -> None:
        i = self.head
        self.obs[i] = o
        self.actions[i] = u
        self.rewards[i] = r
        self.done[i] = done
        if o2 is not None:
            self.next_obs[i] = o2
        else:
            self.next_obs[i] = 0.0
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def clear(self) -> None:
        self.size = 0
        self.head = 0

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.done[idx]


class QLearner:
    """Online and target Q-networks, replay and optimiser for one agent."""

    def __init__(self, agent_id: int, obs_dim: int, cfg: RunConfig, rng: np.random.Generator):
        self.agent_id = agent_id
        self.cfg = cfg
        self.online = DenseNet.mlp(obs_dim, cfg.network.q_hidden, N_ACTIONS, rng)
        self.target = self.online.copy()
        self.adam = AdamState.from_config(self.online, cfg.optimizer)
        self.replay = ReplayBuffer(cfg.iql.replay_capacity, obs_dim)
        self.rng = rng
        self.updates = 0

    def q_values(self, obs) -> np.ndarray:
        return self.online(np.asarray(obs, dtype=np.float32))

    def sync_target(self) -> None:
        self.target.load_from(self.online)

    def td_targets(self, rewards, next_obs, done) -> np.ndarray:
        """``y = r + gamma * max_u' Q^-(o', u')``, and ``y = r`` on terminal transitions."""
        q_next = self.target(next_obs).astype(np.float64).max(axis=1)
        return rewards + self.cfg.train.gamma * np.where(done, 0.0, q_next)

    def loss(self, obs, actions, targets):
        q, tape = forward(self.online, obs)
        value, dq = losses.q_regression_loss(q, actions, targets)
        return value, backward(self.online, tape, dq.astype(q.dtype))

    def update(self) -> float:
        o, u, r, o2, done = self.replay.sample(self.cfg.iql.batch_size, self.rng)
        value, grads = self.loss(o, u, self.td_targets(r, o2, done))
        if not np.isfinite(value):
            raise NonFiniteError(f"agent {self.agent_id}: Q loss is not finite")
        adam_step(self.online, grads, self.adam, self.cfg.optimizer.grad_clip)
        self.updates += 1
        if self.updates % self.cfg.iql.target_sync == 0:
            self.sync_target()
        return value

    def store(self, episodes: list[EpisodeRecord]) -> int:
        """Add this agent's transitions (and nobody else's); returns how many were added."""
        i = self.agent_id
        added = 0
        for ep in episodes:
            for t in range(len(ep)):
                o = ep.obs[t][i]
                if o is None:
                    continue
                o2 = ep.next_obs[t][i]
                done = bool(ep.terminal[t]) or o2 is None
                self.replay.add(o, ep.actions[t][i], ep.rewards[t][i], o2, done)
                added += 1
        return added


@dataclass
class IqlTeam:
    learners: list[QLearner]
    config: RunConfig

    algo = "iql"

    def nets(self) -> dict[str, DenseNet]:
        out = {}
        for q in self.learners:
            out[f"q{q.agent_id}"] = q.online
            out[f"q{q.agent_id}_target"] = q.target
        return out


def build_team(cfg: RunConfig, rngs) -> IqlTeam:
    obs = cfg.observation
    return IqlTeam([QLearner(i, observation_length(k, obs.near_j, obs.far_m), cfg, rng)
                    for i, (k, rng) in enumerate(zip(cfg.world.sensor_k, rngs))], cfg)


def epsilon(cfg: RunConfig, iteration: int) -> float:
    """Linear anneal from ``eps_start`` to ``eps_end`` over ``eps_fraction`` of training."""
    q = cfg.iql
    horizon = max(q.eps_fraction * cfg.train.max_episodes, 1.0)
    frac = min(iteration / horizon, 1.0)
    return q.eps_start + frac * (q.eps_end - q.eps_start)


def _selector(team: IqlTeam, rng: np.random.Generator, eps: float):
    def select(obs_lists):
        out = []
        for obs in obs_lists:
            acts = []
            for q, o in zip(team.learners, obs):
                if o is None:
                    acts.append(int(Action.NO_MOVE))
                elif rng.random() < eps:
                    acts.append(int(rng.integers(N_ACTIONS)))
                else:
                    acts.append(int(np.argmax(q.q_values(o))))
            out.append(acts)
        return out
    return select


def iql_train(cfg: RunConfig, out_dir: str | Path | None = None, progress_every: int = 0,
              eval_hook: bool = True) -> tuple[IqlTeam, TrainingCurve]:
    """Train one Q-learner per agent for ``max_episodes`` batches of ``n_envs`` episodes.

    After each batch every learner takes one gradient step per environment
    step collected. The curve's ``critic_loss`` column holds the mean TD loss.
    """
    from ..evaluation import evaluation_seeds, run_trials

    seq = np.random.SeedSequence(cfg.seed)
    env_seq, act_seq, agent_seq = seq.spawn(3)
    env_rng = np.random.default_rng(env_seq)
    act_rng = np.random.default_rng(act_seq)
    team = build_team(cfg, [np.random.default_rng(s) for s in agent_seq.spawn(cfg.world.n_agents)])
    curve = TrainingCurve()
    tc = cfg.train
    started = time.time()
    for it in range(tc.max_episodes):
        worlds = make_worlds(cfg, training_seeds(env_rng, tc.n_envs))
        episodes = run_lockstep(worlds, cfg, _selector(team, act_rng, epsilon(cfg, it)),
                                record_states=False, record_next=True)
        n_steps = max(len(ep) for ep in episodes)
        td = []
        try:
            for q in team.learners:
                if not cfg.iql.use_replay:
                    q.replay.clear()
                q.store(episodes)
                if len(q.replay) < max(cfg.iql.learning_starts if cfg.iql.use_replay else 1, 1):
                    continue
                td += [q.update() for _ in range(n_steps)]
        except NonFiniteError as exc:
            path = None
            if out_dir is not None:
                from ..checkpoint import save_checkpoint
                path = Path(out_dir) / "diverged.ckpt"
                save_checkpoint(team, path)
            raise TrainingDiverged(f"episode {it}: {exc}", path) from exc
        curve.episode.append(it)
        curve.mean_length.append(float(np.mean([len(ep) for ep in episodes])))
        curve.mean_coverage.append(float(np.mean([ep.coverage for ep in episodes])))
        curve.critic_loss.append(float(np.mean(td)) if td else 0.0)
        curve.actor_loss.append(0.0)
        curve.triplet_loss.append(0.0)
        if eval_hook and tc.eval_interval and tc.eval_trials and (it + 1) % tc.eval_interval == 0:
            stats = run_trials(IqlPolicy(team), cfg, tc.eval_trials, evaluation_seeds(tc.eval_trials))
            curve.eval_episode.append(it + 1)
            curve.eval_mean_completion.append(stats.mean_completion)
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iql episode %d  len %.2f  eps %.2f  (%.0fs)", it + 1,
                     np.mean(curve.mean_length[-progress_every:]), epsilon(cfg, it), time.time() - started)
    return team, curve


class IqlPolicy(Policy):
    """Greedy action of each agent's own Q-network."""

    name = "iql"

    def __init__(self, team: IqlTeam):
        self.team = team

    def select(self, world, observations, rng):
        return [Action.NO_MOVE if o is None else Action(int(np.argmax(q.q_values(o))))
                for q, o in zip(self.team.learners, observations)]
