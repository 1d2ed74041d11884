"""Embedded multi-agent actor-critic (EMAC).

Each agent owns a one-layer encoder mapping its variable-length
observation to a fixed ``d``-vector. A single actor is shared by all
agents on top of the encodings, and a centralised critic sees the global
state during training only. Every episode batch gets one critic step, one
actor step (which also reaches the encoders) and one triplet step on the
encoders, in that order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .config import RunConfig
from .nn import AdamState, DenseNet, Gradients, NonFiniteError, adam_step, backward, forward, softmax, sample_categorical
from .observe import observation_length
from .rollout import EpisodeRecord, TrajectoryBuffer, make_worlds, run_lockstep, training_seeds
from .sim import N_ACTIONS, Action

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message if checkpoint is None else f"{message} (diagnostic checkpoint: {checkpoint})")
        self.checkpoint = checkpoint


@dataclass
class EmacModel:
    encoders: list[DenseNet]
    actor: DenseNet
    critic: DenseNet
    config: RunConfig

    @property
    def embed_dim(self) -> int:
        return self.actor.in_dim

    @property
    def sensor_k(self) -> tuple[int, ...]:
        return self.config.world.sensor_k

    def nets(self) -> dict[str, DenseNet]:
        out = {f"encoder{i}": enc for i, enc in enumerate(self.encoders)}
        out["actor"] = self.actor
        out["critic"] = self.critic
        return out

    def astype(self, dtype) -> EmacModel:
        return EmacModel([e.astype(dtype) for e in self.encoders], self.actor.astype(dtype),
                         self.critic.astype(dtype), self.config)


def build_model(cfg: RunConfig, rng: np.random.Generator) -> EmacModel:
    net = cfg.network
    obs = cfg.observation
    encoders = [
        DenseNet.init([observation_length(k, obs.near_j, obs.far_m), net.embed_dim], [net.encoder_activation], rng)
        for k in cfg.world.sensor_k
    ]
    actor = DenseNet.mlp(net.embed_dim, net.actor_hidden, N_ACTIONS, rng, out_scale=net.policy_out_scale)
    critic = DenseNet.mlp(3 * cfg.world.size ** 2, net.critic_hidden, 1, rng)
    return EmacModel(encoders, actor, critic, cfg)


def embed(encoder: DenseNet, observation) -> np.ndarray:
    """Fixed-length encoding of one observation (or a batch of them)."""
    observation = np.asarray(observation)
    if observation.shape[-1] != encoder.in_dim:
        raise ValueError(f"observation length {observation.shape[-1]} != encoder input {encoder.in_dim}")
    return encoder(observation)


def compute_returns(rewards, gamma: float) -> np.ndarray:
    return losses.discounted_returns(rewards, gamma)


# ---------------------------------------------------------------- batches


@dataclass
class ActorBatch:
    """Samples grouped by agent; ``obs[i]`` is ``(N_i, L_i)``."""

    obs: list[np.ndarray]
    actions: list[np.ndarray]
    advantages: list[np.ndarray]

    @property
    def size(self) -> int:
        return sum(len(a) for a in self.actions)


@dataclass
class TripletBatch:
    anchor_agent: np.ndarray
    positive_agent: np.ndarray
    anchor_obs: list[np.ndarray]
    positive_obs: list[np.ndarray]
    negative_obs: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.anchor_agent)


@dataclass
class UpdateBatch:
    states: np.ndarray
    critic_targets: np.ndarray
    # per agent: observations, actions, returns and the row of ``states`` each sample came from
    obs: list[np.ndarray]
    actions: list[np.ndarray]
    returns: list[np.ndarray]
    state_index: list[np.ndarray]


def assemble_batch(episodes: list[EpisodeRecord], gamma: float, n_agents: int) -> UpdateBatch:
    """Monte Carlo returns per (env, agent) and mean-over-agents critic targets per (env, t)."""
    states, targets = [], []
    obs = [[] for _ in range(n_agents)]
    acts = [[] for _ in range(n_agents)]
    rets = [[] for _ in range(n_agents)]
    sidx = [[] for _ in range(n_agents)]
    offset = 0
    for ep in episodes:
        per_t_sum = np.zeros(len(ep))
        per_t_cnt = np.zeros(len(ep))
        for i in range(n_agents):
            steps = ep.agent_steps(i)
            if not steps:
                continue
            r = np.array([ep.rewards[t][i] for t in steps])
            ret = compute_returns(r, gamma)
            per_t_sum[steps] += ret
            per_t_cnt[steps] += 1
            obs[i].extend(ep.obs[t][i] for t in steps)
            acts[i].extend(ep.actions[t][i] for t in steps)
            rets[i].append(ret)
            sidx[i].append(np.asarray(steps) + offset)
        states.extend(ep.states)
        targets.append(per_t_sum / np.maximum(per_t_cnt, 1))
        offset += len(ep)

    def stack(rows, width):
        return np.stack(rows) if rows else np.zeros((0, width), dtype=np.float32)
    return UpdateBatch(
        states=np.stack(states),
        critic_targets=np.concatenate(targets),
        obs=[stack(o, 0) for o in obs],
        actions=[np.asarray(a, dtype=np.int64) for a in acts],
        returns=[np.concatenate(r) if r else np.zeros(0) for r in rets],
        state_index=[np.concatenate(s) if s else np.zeros(0, dtype=np.int64) for s in sidx],
    )


def sample_triplets(episodes: list[EpisodeRecord], time_buffer: int, rng: np.random.Generator):
    """One triplet per (env, agent, t): positive from a random teammate at t,
    negative from the same agent at a random t' with ``|t' - t| > time_buffer``.

    Returns a list of ``(env, i, j, t, t_neg)`` tuples. Environments whose
    episode is shorter than ``2 * time_buffer + 1`` steps are skipped.
    """
    out = []
    for e, ep in enumerate(episodes):
        if len(ep) < 2 * time_buffer + 1:
            continue
        for i in range(ep.n_agents):
            steps = np.asarray(ep.agent_steps(i))
            if steps.size == 0:
                continue
            for t in steps:
                mates = [j for j in range(ep.n_agents) if j != i and ep.obs[t][j] is not None]
                negatives = steps[np.abs(steps - t) > time_buffer]
                if not mates or negatives.size == 0:
                    continue
                j = mates[int(rng.integers(len(mates)))]
                t_neg = int(negatives[int(rng.integers(negatives.size))])
                out.append((e, i, j, int(t), t_neg))
    return out


def triplet_batch(episodes: list[EpisodeRecord], triplets) -> TripletBatch:
    return TripletBatch(
        anchor_agent=np.array([i for _, i, _, _, _ in triplets], dtype=np.int64),
        positive_agent=np.array([j for _, _, j, _, _ in triplets], dtype=np.int64),
        anchor_obs=[episodes[e].obs[t][i] for e, i, _, t, _ in triplets],
        positive_obs=[episodes[e].obs[t][j] for e, _, j, t, _ in triplets],
        negative_obs=[episodes[e].obs[tn][i] for e, i, _, _, tn in triplets],
    )


# ---------------------------------------------------------------- losses


def critic_loss(model: EmacModel, states, targets):
    """``mean((R - V(s))^2)``; gradients w.r.t. the critic only."""
    values, tape = forward(model.critic, states)
    loss, dv = losses.value_loss(values[:, 0], targets)
    grads = backward(model.critic, tape, dv[:, None].astype(values.dtype))
    return loss, grads


def _embed_groups(encoders, groups):
    """Forward each agent's stacked observations; returns embeddings and tapes."""
    embs, tapes = [], []
    for enc, x in zip(encoders, groups):
        if len(x):
            y, tape = forward(enc, x)
        else:
            y, tape = np.zeros((0, enc.out_dim), dtype=enc.weights[0].dtype), None
        embs.append(y)
        tapes.append(tape)
    return embs, tapes


def actor_loss(model: EmacModel, batch: ActorBatch, entropy_coeff: float = 0.0,
               entropy_mode: str = "full", through_encoders: bool = True):
    """Policy loss over all agents' samples with a shared actor.

    Returns ``(loss, actor_grads, encoder_grads)``; ``encoder_grads[i]`` is
    ``None`` when agent i has no samples or encoder gradients are disabled.
    """
    embs, tapes = _embed_groups(model.encoders, batch.obs)
    z = np.concatenate(embs)
    logits, tape = forward(model.actor, z)
    loss, dlogits = losses.policy_loss(logits, np.concatenate(batch.actions),
                                       np.concatenate(batch.advantages), entropy_coeff, entropy_mode)
    actor_grads = backward(model.actor, tape, dlogits.astype(logits.dtype))
    enc_grads = [None] * len(model.encoders)
    if through_encoders:
        start = 0
        for i, y in enumerate(embs):
            stop = start + len(y)
            if tapes[i] is not None:
                enc_grads[i] = backward(model.encoders[i], tapes[i], actor_grads.dx[start:stop])
            start = stop
    return loss, actor_grads, enc_grads


def triplet_loss(model: EmacModel, batch: TripletBatch, margin: float = 0.2, form: str = "hinge",
                 weight: float = 1.0):
    """Weighted triplet loss on encoder outputs; returns ``(loss, encoder_grads)``."""
    n_agents = len(model.encoders)
    d = model.embed_dim
    t = len(batch)
    # rows per agent: (role, triplet index, observation)
    rows = [[] for _ in range(n_agents)]
    for k in range(t):
        rows[batch.anchor_agent[k]].append((0, k, batch.anchor_obs[k]))
        rows[batch.positive_agent[k]].append((1, k, batch.positive_obs[k]))
        rows[batch.anchor_agent[k]].append((2, k, batch.negative_obs[k]))
    emb = np.zeros((3, t, d))
    tapes = [None] * n_agents
    for i, r in enumerate(rows):
        if not r:
            continue
        y, tapes[i] = forward(model.encoders[i], np.stack([o for _, _, o in r]))
        for (role, k, _), yk in zip(r, y):
            emb[role, k] = yk
    loss, (da, dp, dn) = losses.triplet_loss(emb[0], emb[1], emb[2], margin, form)
    grad_roles = np.stack([da, dp, dn]) * weight
    grads = [None] * n_agents
    for i, r in enumerate(rows):
        if not r:
            continue
        enc = model.encoders[i]
        dy = np.stack([grad_roles[role, k] for role, k, _ in r]).astype(enc.weights[0].dtype)
        grads[i] = backward(enc, tapes[i], dy)
    return weight * loss, grads


# ---------------------------------------------------------------- acting


def policy_probs(model: EmacModel, obs_by_agent: list[np.ndarray | None]) -> list[np.ndarray | None]:
    out = []
    for i, o in enumerate(obs_by_agent):
        if o is None:
            out.append(None)
            continue
        logits = model.actor(embed(model.encoders[i], o))
        out.append(softmax(logits.astype(np.float64)))
    return out


def act(model: EmacModel, observations: list[np.ndarray | None], rng: np.random.Generator,
        greedy: bool = False) -> list[Action]:
    """Decentralised execution: agent i's action depends only on its own observation."""
    actions = []
    for probs in policy_probs(model, observations):
        if probs is None:
            actions.append(Action.NO_MOVE)
        elif greedy:
            actions.append(Action(int(np.argmax(probs))))
        else:
            actions.append(Action(sample_categorical(probs, rng)))
    return actions


def batched_selector(model: EmacModel, rng: np.random.Generator, greedy: bool = False):
    """Action selector for :func:`run_lockstep` that batches each agent's encoder across envs."""
    n = len(model.encoders)

    def select(obs_lists):
        embs, where = [], []
        for i in range(n):
            rows = [(e, o[i]) for e, o in enumerate(obs_lists) if o[i] is not None]
            if not rows:
                continue
            embs.append(model.encoders[i](np.stack([o for _, o in rows])))
            where += [(e, i) for e, _ in rows]
        actions = [[int(Action.NO_MOVE)] * n for _ in obs_lists]
        if not where:
            return actions
        probs = softmax(model.actor(np.concatenate(embs)).astype(np.float64))
        picks = np.argmax(probs, axis=1) if greedy else sample_categorical(probs, rng)
        for (e, i), a in zip(where, picks):
            actions[e][i] = int(a)
        return actions

    return select


# ---------------------------------------------------------------- training


@dataclass
class TrainingCurve:
    episode: list[int] = field(default_factory=list)
    mean_length: list[float] = field(default_factory=list)
    mean_coverage: list[float] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    actor_loss: list[float] = field(default_factory=list)
    triplet_loss: list[float] = field(default_factory=list)
    eval_episode: list[int] = field(default_factory=list)
    eval_mean_completion: list[float] = field(default_factory=list)

    def window_mean(self, first: bool, n: int = 100) -> float:
        values = self.mean_length[:n] if first else self.mean_length[-n:]
        return float(np.mean(values))

    def to_tsv(self) -> str:
        lines = ["episode\tmean_length\tmean_coverage\tcritic_loss\tactor_loss\ttriplet_loss"]
        for row in zip(self.episode, self.mean_length, self.mean_coverage,
                       self.critic_loss, self.actor_loss, self.triplet_loss):
            lines.append("\t".join([str(row[0])] + [f"{v:.6g}" for v in row[1:]]))
        return "\n".join(lines) + "\n"

    def eval_tsv(self) -> str:
        lines = ["episode\tmean_completion"]
        lines += [f"{e}\t{v:.6g}" for e, v in zip(self.eval_episode, self.eval_mean_completion)]
        return "\n".join(lines) + "\n"


class Optimizers:
    def __init__(self, nets: dict[str, DenseNet], opt_cfg):
        self.cfg = opt_cfg
        self.states = {name: AdamState.from_config(net, opt_cfg) for name, net in nets.items()}

    def step(self, name: str, net: DenseNet, grads: Gradients) -> None:
        adam_step(net, grads, self.states[name], self.cfg.grad_clip)


def _ensure_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} is not finite")


def update(model: EmacModel, optim: Optimizers, episodes: list[EpisodeRecord], rng: np.random.Generator):
    """Critic, then actor (+encoders), then triplet step on one episode batch."""
    t = model.config.train
    batch = assemble_batch(episodes, t.gamma, len(model.encoders))
    values = model.critic(batch.states)[:, 0].astype(np.float64)

    c_loss, c_grads = critic_loss(model, batch.states, batch.critic_targets)
    _ensure_finite(c_loss, "critic loss")
    optim.step("critic", model.critic, c_grads)

    advantages = [ret - values[idx] for ret, idx in zip(batch.returns, batch.state_index)]
    if t.normalize_advantages:
        flat = np.concatenate(advantages)
        mu, sd = flat.mean(), flat.std() + 1e-8
        advantages = [(a - mu) / sd for a in advantages]
    a_loss, a_grads, e_grads = actor_loss(
        model, ActorBatch(batch.obs, batch.actions, advantages),
        t.entropy_coeff, t.entropy_mode, t.actor_grad_to_encoder,
    )
    _ensure_finite(a_loss, "actor loss")
    optim.step("actor", model.actor, a_grads)
    for i, g in enumerate(e_grads):
        if g is not None:
            optim.step(f"encoder{i}", model.encoders[i], g)

    trip = sample_triplets(episodes, t.triplet_time_buffer, rng)
    tr_loss = 0.0
    if trip and t.triplet_weight > 0:
        tr_loss, tr_grads = triplet_loss(model, triplet_batch(episodes, trip), t.triplet_margin,
                                         t.triplet_form, t.triplet_weight)
        _ensure_finite(tr_loss, "triplet loss")
        for i, g in enumerate(tr_grads):
            if g is not None:
                optim.step(f"encoder{i}", model.encoders[i], g)
    return c_loss, a_loss, tr_loss


def train(cfg: RunConfig, out_dir: str | Path | None = None, progress_every: int = 0,
          eval_hook: bool = True) -> tuple[EmacModel, TrainingCurve]:
    """Train EMAC for ``cfg.train.max_episodes`` batches of ``cfg.train.n_envs`` episodes.

    Same seed, same curve. On divergence a diagnostic checkpoint is written
    to ``out_dir`` (when given) and :class:`TrainingDiverged` is raised.
    """
    from .evaluation import EmacPolicy, evaluation_seeds, run_trials

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, policy_rng, env_rng, trip_rng = (np.random.default_rng(s) for s in seeds)
    model = build_model(cfg, init_rng)
    optim = Optimizers(model.nets(), cfg.optimizer)
    buffer = TrajectoryBuffer()
    curve = TrainingCurve()
    select = batched_selector(model, policy_rng)
    tc = cfg.train
    started = time.time()
    for episode in range(tc.max_episodes):
        worlds = make_worlds(cfg, training_seeds(env_rng, tc.n_envs))
        buffer.extend(run_lockstep(worlds, cfg, select))
        try:
            losses_ = update(model, optim, buffer.episodes, trip_rng)
        except NonFiniteError as exc:
            path = None
            if out_dir is not None:
                from .checkpoint import save_checkpoint
                path = Path(out_dir) / "diverged.ckpt"
                save_checkpoint(model, path)
            raise TrainingDiverged(f"episode {episode}: {exc}", path) from exc
        curve.episode.append(episode)
        curve.mean_length.append(float(np.mean([len(ep) for ep in buffer.episodes])))
        curve.mean_coverage.append(float(np.mean([ep.coverage for ep in buffer.episodes])))
        curve.critic_loss.append(losses_[0])
        curve.actor_loss.append(losses_[1])
        curve.triplet_loss.append(losses_[2])
        buffer.clear()
        if eval_hook and tc.eval_interval and tc.eval_trials and (episode + 1) % tc.eval_interval == 0:
            stats = run_trials(EmacPolicy(model, greedy=True), cfg, tc.eval_trials,
                               evaluation_seeds(tc.eval_trials))
            curve.eval_episode.append(episode + 1)
            curve.eval_mean_completion.append(stats.mean_completion)
        if progress_every and (episode + 1) % progress_every == 0:
            log.info("episode %d  len %.2f  cov %.3f  (%.0fs)", episode + 1,
                     np.mean(curve.mean_length[-progress_every:]), curve.mean_coverage[-1],
                     time.time() - started)
    return model, curve
