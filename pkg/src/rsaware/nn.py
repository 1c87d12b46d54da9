"""Multilayer perceptrons on top of :mod:`rsaware.autodiff`, plus Adam.

Checkpoint format (JSON, version 1)::

    {"format": "rsaware-mlp", "version": 1,
     "dropout": [rate per hidden layer],
     "layers": [{"shape": [fan_in, fan_out],
                 "weight": [row-major floats], "bias": [floats]}, ...]}

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var

CHECKPOINT_VERSION = 1


@dataclass
class ParameterSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: list[float] = field(default_factory=list)  # one per hidden layer

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} != previous output")
        if not self.dropout:
            self.dropout = [0.0] * (len(self.weights) - 1)
        if len(self.dropout) != len(self.weights) - 1:
            raise ValueError("need one dropout rate per hidden layer")
        for r in self.dropout:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate {r} not in [0, 1)")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def blocks(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    def with_blocks(self, blocks: dict[str, np.ndarray], prefix: str = "") -> "ParameterSet":
        n = len(self.weights)
        return ParameterSet(
            [blocks[f"{prefix}W{i}"] for i in range(n)],
            [blocks[f"{prefix}b{i}"] for i in range(n)],
            list(self.dropout),
        )

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                            list(self.dropout))

    def to_dict(self) -> dict:
        return {
            "format": "rsaware-mlp",
            "version": CHECKPOINT_VERSION,
            "dropout": list(self.dropout),
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSet":
        if d.get("format") != "rsaware-mlp" or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a version-1 rsaware-mlp checkpoint")
        ws, bs = [], []
        for layer in d["layers"]:
            shape = tuple(layer["shape"])
            w = np.asarray(layer["weight"], dtype=np.float64)
            b = np.asarray(layer["bias"], dtype=np.float64)
            if w.size != shape[0] * shape[1] or b.size != shape[1]:
                raise ValueError(f"layer values do not match shape {shape}")
            ws.append(w.reshape(shape))
            bs.append(b)
        return cls(ws, bs, [float(r) for r in d["dropout"]])


def init_params(sizes, seed: int, dropout: float | list[float] = 0.0) -> ParameterSet:
    """Glorot-uniform weights and zero biases for an MLP with layer widths ``sizes``."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output width")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"zero-width layer in {sizes}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    rates = dropout if isinstance(dropout, list) else [float(dropout)] * (len(sizes) - 2)
    return ParameterSet(ws, bs, rates)


def forward(params: ParameterSet, x, mode: str = "eval", rng=None, tape: Tape | None = None,
            prefix: str = "", param_vars: dict | None = None):
    """Run the MLP, returning ``(logits, tape)``.

    In ``train`` mode each hidden layer applies inverted dropout with masks
    drawn from ``rng`` (a seed or a ``numpy.random.Generator``).  Parameters
    are registered on the tape under ``prefix`` unless ``param_vars`` already
    holds them.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    tape = tape if tape is not None else Tape()
    h = x if isinstance(x, Var) else tape.constant(np.atleast_2d(x))
    if h.value.shape[1] != params.sizes[0]:
        raise ValueError(f"input width {h.value.shape[1]} != {params.sizes[0]}")
    if param_vars is None:
        param_vars = {name: tape.param(v, name) for name, v in params.blocks(prefix).items()}
    if mode == "train" and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    last = len(params.weights) - 1
    for i in range(last + 1):
        h = tape.affine(h, param_vars[f"{prefix}W{i}"], param_vars[f"{prefix}b{i}"])
        if i < last:
            h = tape.relu(h)
            rate = params.dropout[i]
            if mode == "train" and rate > 0:
                mask = (rng.random(h.value.shape) >= rate) / (1.0 - rate)
                h = tape.mul_const(h, mask)
    return h, tape


def predict(params: ParameterSet, x, mode="eval", rng=None) -> np.ndarray:
    return forward(params, x, mode, rng)[0].value


@dataclass
class AdamState:
    lr: float = 1e-3
    decay: float = 1.0  # multiplicative lr decay per epoch
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay factor {self.decay} not in (0, 1]")

    def end_epoch(self) -> None:
        self.lr *= self.decay


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update.  Returns new parameter arrays; mutates ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


def save_params(params: ParameterSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh)


def load_params(path) -> ParameterSet:
    with open(path) as fh:
        return ParameterSet.from_dict(json.load(fh))
