"""Loss functions on plain arrays, each returning ``(loss, gradient)``.

These are shared by EMAC, IAC and IQL; network-level wrappers chain the
returned gradients through :func:`emac.nn.backward`.
"""
from __future__ import annotations

import numpy as np

from .nn import log_softmax


def value_loss(values, targets):
    """Mean squared error ``mean((R - V)^2)``; returns ``(loss, dL/dV)``."""
    values = np.asarray(values, dtype=np.float64)
    diff = values - np.asarray(targets, dtype=np.float64)
    n = max(diff.size, 1)
    return float(np.mean(diff * diff)) if diff.size else 0.0, 2.0 * diff / n


def policy_loss(logits, actions, advantages, entropy_coeff=0.0, entropy_mode="full"):
    """Advantage-weighted negative log-likelihood plus an entropy regulariser.

    ``loss = -mean(log pi(u) * A) + c * mean(H_term)`` where ``H_term`` is
    ``sum_u pi(u) log pi(u)`` ("full") or ``pi(u_t) log pi(u_t)`` ("taken").
    Minimising the second term raises policy entropy. Returns
    ``(loss, dL/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    adv = np.asarray(advantages, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    rows = np.arange(n)
    logp = log_softmax(logits)
    p = np.exp(logp)
    taken_logp = logp[rows, actions]
    onehot = np.zeros_like(logits)
    onehot[rows, actions] = 1.0

    pg = -np.mean(taken_logp * adv)
    grad = -(adv[:, None] * (onehot - p)) / n

    if entropy_mode == "full":
        plogp = np.sum(p * logp, axis=1)
        ent = np.mean(plogp)
        ent_grad = p * (logp - plogp[:, None])
    elif entropy_mode == "taken":
        pa = p[rows, actions]
        ent = np.mean(pa * taken_logp)
        ent_grad = (pa * (taken_logp + 1.0))[:, None] * (onehot - p)
    else:
        raise ValueError(f"unknown entropy mode {entropy_mode!r}")
    return float(pg + entropy_coeff * ent), grad + entropy_coeff * ent_grad / n


def triplet_loss(anchor, positive, negative, margin=0.2, form="hinge"):
    """Time-contrastive triplet loss on embeddings of shape ``(T, d)``.

    Per triplet ``x = |a - p|^2 - |a - n|^2 + margin``; the loss is
    ``mean(max(0, x))`` (hinge) or ``mean(log(1 + exp(x)))`` (soft).
    Returns ``(loss, (dA, dP, dN))``.
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    t = a.shape[0]
    if t == 0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    x = np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + margin
    if form == "hinge":
        loss = np.mean(np.maximum(x, 0.0))
        dx = (x > 0).astype(np.float64) / t
    elif form == "soft":
        loss = np.mean(np.logaddexp(0.0, x))
        dx = 1.0 / (1.0 + np.exp(-x)) / t
    else:
        raise ValueError(f"unknown triplet form {form!r}")
    dx = dx[:, None]
    return float(loss), (dx * 2.0 * (n - p), dx * -2.0 * (a - p), dx * 2.0 * (a - n))


def q_regression_loss(q_values, actions, targets):
    """``mean((Q(o, u) - y)^2)`` over the taken actions; returns ``(loss, dL/dQ)``."""
    q = np.asarray(q_values, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    rows = np.arange(q.shape[0])
    diff = q[rows, actions] - np.asarray(targets, dtype=np.float64)
    grad = np.zeros_like(q)
    grad[rows, actions] = 2.0 * diff / max(len(diff), 1)
    return float(np.mean(diff * diff)) if len(diff) else 0.0, grad


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Monte Carlo returns ``R_t = r_t + gamma * R_{t+1}`` with no bootstrap past the end."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out
