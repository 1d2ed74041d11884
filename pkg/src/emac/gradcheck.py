"""Finite-difference checks of every hand-written gradient.

Each suite draws small random instances in float64, compares analytic
gradients against central differences and reports the worst relative
error. Instances that sit within ``KINK_MARGIN`` of a ReLU or hinge kink
are redrawn, since finite differences are meaningless there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config as config_mod
from .nn import DenseNet, forward, max_relative_error, numeric_gradient
from .observe import observation_length

TOLERANCE = 1e-4
FD_EPS = 1e-5
KINK_MARGIN = 1e-3
MAX_REDRAWS = 100


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_rel_error <= TOLERANCE

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<14} instances={self.instances:<3} max_rel_error={self.max_rel_error:.3e}  {status}"


def relu_margin(net: DenseNet, x) -> float:
    """Smallest ``|pre-activation|`` over the net's ReLU units for input ``x``."""
    h = np.asarray(x, dtype=np.float64)
    margin = np.inf
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        if act == "relu":
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0)
        elif act == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return margin


def _small_config(rng: np.random.Generator):
    n = int(rng.integers(1, 4))
    return config_mod.replace(
        config_mod.desk_preset(),
        world={"size": int(rng.integers(3, 6)), "n_agents": n,
               "sensor_k": tuple(int(k) for k in rng.choice([3, 5], size=n))},
        observation={"near_j": int(rng.choice([1, 3])), "far_m": int(rng.integers(1, 4))},
        network={"embed_dim": int(rng.integers(3, 7)),
                 "encoder_activation": str(rng.choice(["relu", "tanh", "identity"])),
                 "actor_hidden": (int(rng.integers(3, 7)),),
                 "critic_hidden": (int(rng.integers(3, 6)), int(rng.integers(3, 6))),
                 "q_hidden": (int(rng.integers(3, 7)),),
                 "policy_out_scale": 1.0},
    )


def _small_model(rng):
    from .trainer import build_model
    cfg = _small_config(rng)
    return build_model(cfg, rng).astype(np.float64), cfg


def _obs_dim(cfg, k):
    return observation_length(k, cfg.observation.near_j, cfg.observation.far_m)


def _draw(make, rng):
    for _ in range(MAX_REDRAWS):
        inst = make(rng)
        if inst is not None:
            return inst
    raise RuntimeError("could not draw an instance away from kinks")


def _check(loss_fn, analytic, params) -> float:
    return max_relative_error(analytic, numeric_gradient(loss_fn, params, FD_EPS))


def critic_suite(n: int = 20, seed: int = 0) -> SuiteResult:
    from .trainer import critic_loss
    rng = np.random.default_rng(seed)

    def make(rng):
        model, cfg = _small_model(rng)
        states = rng.random((int(rng.integers(2, 6)), 3 * cfg.world.size ** 2))
        targets = rng.normal(size=len(states)) * 3
        return None if relu_margin(model.critic, states) < KINK_MARGIN else (model, states, targets)

    worst = 0.0
    for _ in range(n):
        model, states, targets = _draw(make, rng)
        _, grads = critic_loss(model, states, targets)
        worst = max(worst, _check(lambda: critic_loss(model, states, targets)[0], grads.arrays(),
                                  model.critic.parameters()))
    return SuiteResult("critic", n, worst)


def actor_suite(n: int = 20, seed: int = 1) -> SuiteResult:
    """Actor loss with entropy, gradients through the shared actor and every encoder."""
    from .trainer import ActorBatch, actor_loss
    rng = np.random.default_rng(seed)

    def make(rng):
        model, cfg = _small_model(rng)
        obs, acts, adv = [], [], []
        for k, enc in zip(cfg.world.sensor_k, model.encoders):
            rows = int(rng.integers(1, 5))
            obs.append(rng.random((rows, _obs_dim(cfg, k))))
            acts.append(rng.integers(0, 9, size=rows))
            adv.append(rng.normal(size=rows))
            if relu_margin(enc, obs[-1]) < KINK_MARGIN:
                return None
            if relu_margin(model.actor, enc(obs[-1])) < KINK_MARGIN:
                return None
        mode = str(rng.choice(["full", "taken"]))
        return model, ActorBatch(obs, acts, adv), float(rng.uniform(0.0, 0.5)), mode

    worst = 0.0
    for _ in range(n):
        model, batch, coeff, mode = _draw(make, rng)
        _, a_grads, e_grads = actor_loss(model, batch, coeff, mode)
        params = model.actor.parameters()
        analytic = a_grads.arrays()
        for enc, g in zip(model.encoders, e_grads):
            params = params + enc.parameters()
            analytic = analytic + g.arrays()
        worst = max(worst, _check(lambda: actor_loss(model, batch, coeff, mode)[0], analytic, params))
    return SuiteResult("actor+entropy", n, worst)


def triplet_suite(n: int = 20, seed: int = 2) -> SuiteResult:
    from . import losses
    from .trainer import TripletBatch, triplet_loss
    rng = np.random.default_rng(seed)

    def make(rng):
        model, cfg = _small_model(rng)
        n_agents = cfg.world.n_agents
        t = int(rng.integers(2, 6))
        anchor = rng.integers(0, n_agents, size=t)
        positive = rng.integers(0, n_agents, size=t)
        dims = [_obs_dim(cfg, k) for k in cfg.world.sensor_k]
        batch = TripletBatch(anchor, positive,
                             [rng.random(dims[i]) for i in anchor],
                             [rng.random(dims[j]) for j in positive],
                             [rng.random(dims[i]) for i in anchor])
        form = str(rng.choice(["hinge", "soft"]))
        margin = float(rng.uniform(0.05, 1.0))
        for i, enc in enumerate(model.encoders):
            xs = [o for a, o in zip(anchor, batch.anchor_obs) if a == i]
            xs += [o for a, o in zip(positive, batch.positive_obs) if a == i]
            xs += [o for a, o in zip(anchor, batch.negative_obs) if a == i]
            if xs and relu_margin(enc, np.stack(xs)) < KINK_MARGIN:
                return None
        if form == "hinge":
            emb = lambda i, o: model.encoders[i](o)
            a = np.stack([emb(i, o) for i, o in zip(anchor, batch.anchor_obs)])
            p = np.stack([emb(j, o) for j, o in zip(positive, batch.positive_obs)])
            ng = np.stack([emb(i, o) for i, o in zip(anchor, batch.negative_obs)])
            x = np.sum((a - p) ** 2, 1) - np.sum((a - ng) ** 2, 1) + margin
            if np.min(np.abs(x)) < KINK_MARGIN:
                return None
        return model, batch, margin, form, float(rng.uniform(0.1, 1.0))

    worst = 0.0
    for _ in range(n):
        model, batch, margin, form, weight = _draw(make, rng)
        _, grads = triplet_loss(model, batch, margin, form, weight)
        params, analytic = [], []
        for enc, g in zip(model.encoders, grads):
            if g is not None:
                params += enc.parameters()
                analytic += g.arrays()
        worst = max(worst, _check(lambda: triplet_loss(model, batch, margin, form, weight)[0], analytic, params))
    # the bare loss on embeddings, including the a/p/n input gradients
    for _ in range(n):
        t, d = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        a, p, ng = rng.normal(size=(t, d)), rng.normal(size=(t, d)), rng.normal(size=(t, d))
        x = np.sum((a - p) ** 2, 1) - np.sum((a - ng) ** 2, 1) + 0.2
        if np.min(np.abs(x)) < KINK_MARGIN:
            continue
        form = str(rng.choice(["hinge", "soft"]))
        _, g = losses.triplet_loss(a, p, ng, 0.2, form)
        worst = max(worst, _check(lambda: losses.triplet_loss(a, p, ng, 0.2, form)[0], list(g), [a, p, ng]))
    return SuiteResult("triplet", n, worst)


def q_regression_suite(n: int = 20, seed: int = 3) -> SuiteResult:
    from .baselines.iql import QLearner
    rng = np.random.default_rng(seed)

    def make(rng):
        cfg = _small_config(rng)
        dim = _obs_dim(cfg, cfg.world.sensor_k[0])
        learner = QLearner(0, dim, cfg, rng)
        learner.online = learner.online.astype(np.float64)
        learner.target = learner.target.astype(np.float64)
        rows = int(rng.integers(2, 8))
        obs = rng.random((rows, dim))
        if relu_margin(learner.online, obs) < KINK_MARGIN:
            return None
        next_obs = rng.random((rows, dim))
        done = rng.random(rows) < 0.3
        targets = learner.td_targets(rng.normal(size=rows), next_obs, done)
        return learner, obs, rng.integers(0, 9, size=rows), targets

    worst = 0.0
    for _ in range(n):
        learner, obs, actions, targets = _draw(make, rng)
        _, grads = learner.loss(obs, actions, targets)
        worst = max(worst, _check(lambda: learner.loss(obs, actions, targets)[0], grads.arrays(),
                                  learner.online.parameters()))
    return SuiteResult("q-regression", n, worst)


SUITES = {
    "critic": critic_suite,
    "actor": actor_suite,
    "triplet": triplet_suite,
    "q": q_regression_suite,
}


def run_all(n: int = 20, seed: int = 0) -> list[SuiteResult]:
    return [suite(n, seed + i) for i, suite in enumerate(SUITES.values())]
