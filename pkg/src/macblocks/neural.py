"""Dense ReLU network with hand-written backprop, used as the Q-function.

Parameters are immutable values: every update returns a new
:class:`NNParams` and the arrays inside are read-only.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CHECKPOINT_FORMAT = "macblocks-mlp"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """NaN or Inf showed up in gradients or parameters."""


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class NNParams:
    """Weights ``W[i]`` have shape (fan_in, fan_out); layer i maps x -> x @ W[i] + b[i]."""

    layer_sizes: tuple
    weights: tuple
    biases: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least 2 layers of width >= 1, got {list(sizes)}")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer transition")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: shapes {w.shape}/{b.shape} do not match {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: "NNParams") -> bool:
        """Exact (bitwise for finite values) equality."""
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NNParams":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a network checkpoint of a supported version")
        sizes = tuple(doc["layer_sizes"])
        weights = [
            np.asarray(flat, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
            for i, flat in enumerate(doc["weights"])
        ]
        return cls(sizes, tuple(weights), tuple(doc["biases"]))


def init_params(layer_sizes: Sequence[int], seed: int) -> NNParams:
    """He-normal weights (variance 2/fan_in) and zero biases."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least 2 layers of width >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return NNParams(tuple(sizes), tuple(weights), tuple(biases))


def zero_output_layer(params: NNParams) -> NNParams:
    ws = list(params.weights)
    bs = list(params.biases)
    ws[-1] = np.zeros_like(ws[-1])
    bs[-1] = np.zeros_like(bs[-1])
    return NNParams(params.layer_sizes, tuple(ws), tuple(bs))


def _check_input(params: NNParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("input contains NaN or Inf")
    return x


def _activations(params: NNParams, x: np.ndarray):
    """Pre-activations and activations of every layer (batch-first)."""
    pre, post = [], [x]
    last = len(params.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        post.append(h)
    return pre, post


def forward(params: NNParams, x) -> np.ndarray:
    x = _check_input(params, x)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector; use forward_batch")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            np.maximum(h, 0.0, out=h)
    return h


def forward_batch(params: NNParams, xs) -> np.ndarray:
    xs = _check_input(params, np.atleast_2d(xs))
    return _activations(params, xs)[1][-1]


def batch_loss_and_gradients(params: NNParams, xs, actions, targets):
    """Mean squared TD error over a batch and its gradient.

    Only the output unit of each sample's action receives error signal.
    """
    xs = _check_input(params, np.atleast_2d(xs))
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    n = xs.shape[0]
    if actions.shape[0] != n or targets.shape[0] != n:
        raise ValueError("inputs, actions and targets must have the same length")
    if n == 0:
        raise ValueError("empty batch")
    if actions.min() < 0 or actions.max() >= params.output_dim:
        raise IndexError(f"action index out of range [0, {params.output_dim})")

    # hidden layers in full; the output layer only for the chosen actions
    w_out, b_out = params.weights[-1], params.biases[-1]
    pre, post = [], [xs]
    h = xs
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        post.append(h)
    q_sel = np.einsum("ij,ji->i", h, w_out[:, actions]) + b_out[actions]
    err = q_sel - targets
    loss = float(np.mean(err * err))

    d_out = 2.0 * err / n
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    gw[-1] = np.zeros_like(w_out)
    np.add.at(gw[-1].T, actions, d_out[:, None] * h)
    gb[-1] = np.bincount(actions, weights=d_out, minlength=params.output_dim).astype(np.float64)
    delta = d_out[:, None] * w_out[:, actions].T
    for i in range(len(params.weights) - 2, -1, -1):
        delta = delta * (pre[i] > 0)
        gw[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ params.weights[i].T
    return loss, NNParams(params.layer_sizes, tuple(gw), tuple(gb))


def loss_and_gradients(params: NNParams, x, action: int, target: float):
    """(q[action] - target)**2 and its gradient for a single sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single input vector")
    if not 0 <= action < params.output_dim:
        raise IndexError(f"action {action} out of range [0, {params.output_dim})")
    return batch_loss_and_gradients(params, x[None, :], [action], [target])


def sgd_step(params: NNParams, grads: NNParams, step_size: float) -> NNParams:
    if not step_size > 0:
        raise ValueError("step_size must be > 0")
    if grads.layer_sizes != params.layer_sizes:
        raise ValueError("gradient shapes do not match the parameters")
    for i, arr in enumerate(grads.arrays()):
        if not np.isfinite(arr).all():
            kind = "weights" if i % 2 == 0 else "biases"
            bad = int(np.size(arr) - np.isfinite(arr).sum())
            raise NonFiniteError(f"gradient of layer {i // 2} {kind} has {bad} non-finite entries")
    new = NNParams(
        params.layer_sizes,
        tuple(w - step_size * g for w, g in zip(params.weights, grads.weights)),
        tuple(b - step_size * g for b, g in zip(params.biases, grads.biases)),
    )
    if not new.is_finite():
        raise NonFiniteError("parameters became non-finite after the update")
    return new


def save_params(params: NNParams, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(params.to_dict(), fh)
    os.replace(tmp, path)


def load_params(path) -> NNParams:
    with open(path) as fh:
        return NNParams.from_dict(json.load(fh))
