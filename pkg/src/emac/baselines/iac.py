"""Independent actor-critic: each agent has its own actor and a critic on its own observation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import losses
from ..config import RunConfig
from ..evaluation import Policy
from ..nn import AdamState, DenseNet, NonFiniteError, adam_step, backward, forward, sample_categorical, softmax
from ..observe import observation_length
from ..rollout import EpisodeRecord, make_worlds, run_lockstep, training_seeds
from ..sim import N_ACTIONS, Action
from ..trainer import TrainingCurve, TrainingDiverged, compute_returns

log = logging.getLogger(__name__)


@dataclass
class AgentSamples:
    obs: np.ndarray
    actions: np.ndarray
    returns: np.ndarray


def agent_samples(episodes: list[EpisodeRecord], agent_id: int, gamma: float, obs_dim: int) -> AgentSamples:
    """Agent ``agent_id``'s own observations, actions and Monte Carlo returns; nothing else is read."""
    obs, acts, rets = [], [], []
    for ep in episodes:
        steps = [t for t in range(len(ep)) if ep.obs[t][agent_id] is not None]
        if not steps:
            continue
        obs += [ep.obs[t][agent_id] for t in steps]
        acts += [ep.actions[t][agent_id] for t in steps]
        rets.append(compute_returns([ep.rewards[t][agent_id] for t in steps], gamma))
    return AgentSamples(
        np.stack(obs) if obs else np.zeros((0, obs_dim), dtype=np.float32),
        np.asarray(acts, dtype=np.int64),
        np.concatenate(rets) if rets else np.zeros(0),
    )


class IacLearner:
    def __init__(self, agent_id: int, obs_dim: int, cfg: RunConfig, rng: np.random.Generator):
        net = cfg.network
        self.agent_id = agent_id
        self.obs_dim = obs_dim
        self.cfg = cfg
        self.actor = DenseNet.mlp(obs_dim, net.iac_hidden, N_ACTIONS, rng, out_scale=net.policy_out_scale)
        self.critic = DenseNet.mlp(obs_dim, net.iac_hidden, 1, rng)
        self.actor_adam = AdamState.from_config(self.actor, cfg.optimizer)
        self.critic_adam = AdamState.from_config(self.critic, cfg.optimizer)

    def probs(self, obs) -> np.ndarray:
        return softmax(self.actor(np.asarray(obs, dtype=np.float32)).astype(np.float64))

    def values(self, obs) -> np.ndarray:
        return self.critic(obs)[:, 0].astype(np.float64)

    def critic_loss(self, obs, returns):
        v, tape = forward(self.critic, obs)
        loss, dv = losses.value_loss(v[:, 0], returns)
        return loss, backward(self.critic, tape, dv[:, None].astype(v.dtype))

    def actor_loss(self, obs, actions, advantages):
        t = self.cfg.train
        logits, tape = forward(self.actor, obs)
        loss, dlogits = losses.policy_loss(logits, actions, advantages, t.entropy_coeff, t.entropy_mode)
        return loss, backward(self.actor, tape, dlogits.astype(logits.dtype))

    def update(self, episodes: list[EpisodeRecord]) -> tuple[float, float]:
        """One critic step then one actor step on this agent's samples; returns both losses."""
        s = agent_samples(episodes, self.agent_id, self.cfg.train.gamma, self.obs_dim)
        if len(s.actions) == 0:
            return 0.0, 0.0
        values = self.values(s.obs)
        c_loss, c_grads = self.critic_loss(s.obs, s.returns)
        adv = s.returns - values
        if self.cfg.train.normalize_advantages:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        a_loss, a_grads = self.actor_loss(s.obs, s.actions, adv)
        if not (np.isfinite(c_loss) and np.isfinite(a_loss)):
            raise NonFiniteError(f"agent {self.agent_id}: loss is not finite")
        clip = self.cfg.optimizer.grad_clip
        adam_step(self.critic, c_grads, self.critic_adam, clip)
        adam_step(self.actor, a_grads, self.actor_adam, clip)
        return c_loss, a_loss


@dataclass
class IacTeam:
    learners: list[IacLearner]
    config: RunConfig

    algo = "iac"

    def nets(self) -> dict[str, DenseNet]:
        out = {}
        for learner in self.learners:
            out[f"actor{learner.agent_id}"] = learner.actor
            out[f"critic{learner.agent_id}"] = learner.critic
        return out


def build_team(cfg: RunConfig, rngs) -> IacTeam:
    obs = cfg.observation
    return IacTeam([IacLearner(i, observation_length(k, obs.near_j, obs.far_m), cfg, rng)
                    for i, (k, rng) in enumerate(zip(cfg.world.sensor_k, rngs))], cfg)


def _selector(team: IacTeam, rng: np.random.Generator, greedy: bool = False):
    def select(obs_lists):
        out = []
        for obs in obs_lists:
            acts = []
            for learner, o in zip(team.learners, obs):
                if o is None:
                    acts.append(int(Action.NO_MOVE))
                    continue
                p = learner.probs(o)
                acts.append(int(np.argmax(p)) if greedy else int(sample_categorical(p, rng)))
            out.append(acts)
        return out
    return select


def iac_train(cfg: RunConfig, out_dir: str | Path | None = None, progress_every: int = 0,
              eval_hook: bool = True) -> tuple[IacTeam, TrainingCurve]:
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
        episodes = run_lockstep(worlds, cfg, _selector(team, act_rng), record_states=False)
        try:
            results = [learner.update(episodes) for learner in team.learners]
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
        curve.critic_loss.append(float(np.mean([r[0] for r in results])))
        curve.actor_loss.append(float(np.mean([r[1] for r in results])))
        curve.triplet_loss.append(0.0)
        if eval_hook and tc.eval_interval and tc.eval_trials and (it + 1) % tc.eval_interval == 0:
            stats = run_trials(IacPolicy(team), cfg, tc.eval_trials, evaluation_seeds(tc.eval_trials))
            curve.eval_episode.append(it + 1)
            curve.eval_mean_completion.append(stats.mean_completion)
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iac episode %d  len %.2f  (%.0fs)", it + 1,
                     np.mean(curve.mean_length[-progress_every:]), time.time() - started)
    return team, curve


class IacPolicy(Policy):
    name = "iac"

    def __init__(self, team: IacTeam, greedy: bool = True):
        self.team = team
        self.greedy = greedy

    def select(self, world, observations, rng):
        out = []
        for learner, o in zip(self.team.learners, observations):
            if o is None:
                out.append(Action.NO_MOVE)
                continue
            p = learner.probs(o)
            out.append(Action(int(np.argmax(p)) if self.greedy else int(sample_categorical(p, rng))))
        return out
