"""Small dense networks with hand-written backprop and Adam.

Layers compute ``y = act(x @ W.T + b)`` with ``W`` shaped ``(out, in)``.
Inputs may be a single vector or a batch ``(B, in)``. Parameters are
float32 for training; gradient checks cast a copy to float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class NonFiniteError(FloatingPointError):
    """A loss, gradient or parameter became NaN or infinite."""


class DenseNet:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], activations: list[str]):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, act) in enumerate(zip(weights, biases, activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[1]} != previous output {weights[i - 1].shape[0]}")
        self.weights = weights
        self.biases = biases
        self.activations = list(activations)

    @classmethod
    def init(cls, sizes, activations, rng: np.random.Generator, dtype=np.float32, out_scale: float = 1.0) -> DenseNet:
        """Uniform He-style init: ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / fan_in)
            if i == len(sizes) - 2:
                limit *= out_scale
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases, activations)

    @classmethod
    def mlp(cls, n_in: int, hidden, n_out: int, rng, out_activation="identity", out_scale=1.0) -> DenseNet:
        sizes = [n_in, *hidden, n_out]
        acts = ["relu"] * len(hidden) + [out_activation]
        return cls.init(sizes, acts, rng, out_scale=out_scale)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> DenseNet:
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    def astype(self, dtype) -> DenseNet:
        return DenseNet([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases], self.activations)

    def load_from(self, other: DenseNet) -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dx: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, net: DenseNet) -> Gradients:
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def add_(self, other: Gradients) -> Gradients:
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self

    def scale_(self, factor: float) -> Gradients:
        for a in self.arrays():
            a *= factor
        return self

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(a, dtype=np.float64))) for a in self.arrays())))


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0)
    if act == "tanh":
        return np.tanh(z)
    return z


def forward(net: DenseNet, x):
    """Return ``(y, tape)``; the tape holds each layer's input and output."""
    x = np.asarray(x)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input dim {x.shape[-1]} != network input {net.in_dim}")
    tape = []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        out = _activate(z, act)
        tape.append((h, out))
        h = out
    return h, tape


def backward(net: DenseNet, tape, dy) -> Gradients:
    """Gradients of a scalar loss w.r.t. all parameters and the input, given ``dL/dy``."""
    dy = np.asarray(dy)
    if dy.shape != tape[-1][1].shape:
        raise ValueError(f"dL/dy shape {dy.shape} != output shape {tape[-1][1].shape}")
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    g = dy
    for i in reversed(range(len(net.weights))):
        h, out = tape[i]
        act = net.activations[i]
        if act == "relu":
            g = g * (out > 0)
        elif act == "tanh":
            g = g * (1 - out * out)
        if g.ndim == 1:
            gw[i] = np.outer(g, h)
            gb[i] = g.copy()
        else:
            gw[i] = g.T @ h
            gb[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    return Gradients(gw, gb, dx=g)


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


def sample_categorical(probs, rng: np.random.Generator):
    """One index per row of ``probs`` (or a single index for a vector)."""
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    idx = np.minimum((cdf <= u[:, None]).sum(axis=1), p.shape[1] - 1)
    # never land on a zero-probability index through rounding at the top of the cdf
    for row in np.flatnonzero(p[np.arange(len(idx)), idx] == 0):
        idx[row] = int(np.flatnonzero(p[row] > 0)[-1])
    return int(idx[0]) if single else idx


class AdamState:
    def __init__(self, net: DenseNet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]
        self.step = 0

    @classmethod
    def from_config(cls, net: DenseNet, opt) -> AdamState:
        return cls(net, opt.lr, opt.beta1, opt.beta2, opt.eps)


def clip_by_global_norm(grads: Gradients, max_norm: float | None) -> float:
    norm = grads.global_norm()
    if max_norm and norm > max_norm:
        grads.scale_(max_norm / norm)
    return norm


def adam_step(net: DenseNet, grads: Gradients, state: AdamState, max_norm: float | None = None):
    """One bias-corrected Adam update, in place. Rejects non-finite gradients."""
    arrays = grads.arrays()
    params = net.parameters()
    if len(arrays) != len(params) or any(a.shape != p.shape for a, p in zip(arrays, params)):
        raise ValueError("gradient shapes do not match network parameters")
    if not all(np.isfinite(a).all() for a in arrays):
        raise NonFiniteError("non-finite gradient; update rejected")
    clip_by_global_norm(grads, max_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, arrays, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    if not net.is_finite():
        raise NonFiniteError("parameters became non-finite")
    return net, state


def numeric_gradient(loss_fn, arrays: list[np.ndarray], eps: float = 1e-3) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """``max|a - n| / max(|a|, |n|)`` with both maxima taken over all arrays together.

    A shared scale keeps arrays whose true gradient is zero (and whose
    finite differences are pure rounding noise) from dominating.
    """
    a = np.concatenate([np.ravel(x).astype(np.float64) for x in analytic]) if analytic else np.zeros(0)
    n = np.concatenate([np.ravel(x).astype(np.float64) for x in numeric]) if numeric else np.zeros(0)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    if scale < 1e-12:
        return 0.0
    return float(np.max(np.abs(a - n))) / scale
