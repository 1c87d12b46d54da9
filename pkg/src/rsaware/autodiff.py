"""Minimal reverse-mode automatic differentiation on 2-D float64 arrays.

Operations are recorded on a :class:`Tape` in execution order; ``backward``
walks the records in reverse.  Only the handful of primitives needed by the
encoders, the reasoning layer and the training objectives are provided.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class Var:
    __slots__ = ("tape", "index", "value", "requires_grad", "name")

    def __init__(self, tape, index, value, requires_grad, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape}, name={self.name})"


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        # (output index, input vars, backward fn) in execution order
        self.records: list[tuple[int, tuple, Callable]] = []
        self.params: dict[str, Var] = {}

    # -- leaves -------------------------------------------------------------

    def _leaf(self, value, requires_grad, name=None):
        v = Var(self, len(self.nodes), np.asarray(value, dtype=np.float64), requires_grad, name)
        self.nodes.append(v)
        return v

    def constant(self, value) -> Var:
        return self._leaf(value, False)

    def param(self, value, name: str) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        v = self._leaf(value, True, name)
        self.params[name] = v
        return v

    def _as_var(self, x):
        return x if isinstance(x, Var) else self.constant(x)

    def _record(self, value, inputs, backward):
        req = any(x.requires_grad for x in inputs)
        out = Var(self, len(self.nodes), value, req)
        self.nodes.append(out)
        if req:
            self.records.append((out.index, inputs, backward))
        return out

    # -- primitives ---------------------------------------------------------

    def affine(self, x, w, b):
        """x @ w + b with x (n, i), w (i, o), b (o,)"""
        x, w, b = self._as_var(x), self._as_var(w), self._as_var(b)
        xv, wv = x.value, w.value

        def back(g):
            return g @ wv.T, xv.T @ g, g.sum(axis=0)

        return self._record(xv @ wv + b.value, (x, w, b), back)

    def matmul_const(self, x, m):
        m = np.asarray(m)
        return self._record(x.value @ m, (x,), lambda g: (g @ m.T,))

    def relu(self, x):
        mask = x.value > 0
        return self._record(x.value * mask, (x,), lambda g: (g * mask,))

    def mul_const(self, x, c):
        c = np.asarray(c, dtype=np.float64)
        return self._record(x.value * c, (x,), lambda g: (g * c,))

    def add(self, a, b):
        a, b = self._as_var(a), self._as_var(b)
        return self._record(a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        a, b = self._as_var(a), self._as_var(b)
        return self._record(a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        a, b = self._as_var(a), self._as_var(b)
        av, bv = a.value, b.value
        return self._record(av * bv, (a, b), lambda g: (g * bv, g * av))

    def div(self, a, b):
        a, b = self._as_var(a), self._as_var(b)
        av, bv = a.value, b.value
        q = av / bv
        return self._record(q, (a, b), lambda g: (g / bv, -g * q / bv))

    def scale(self, x, s: float):
        s = float(s)
        return self._record(x.value * s, (x,), lambda g: (g * s,))

    def add_scalar(self, x, s: float):
        return self._record(x.value + float(s), (x,), lambda g: (g,))

    def log(self, x):
        xv = x.value
        return self._record(np.log(xv), (x,), lambda g: (g / xv,))

    def clamp_min(self, x, floor: float):
        keep = x.value >= floor
        return self._record(np.where(keep, x.value, floor), (x,), lambda g: (g * keep,))

    def softmax(self, x):
        z = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=1, keepdims=True)

        def back(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

        return self._record(s, (x,), back)

    def log_softmax(self, x):
        z = x.value - x.value.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        out = z - lse
        s = np.exp(out)

        def back(g):
            return (g - s * g.sum(axis=1, keepdims=True),)

        return self._record(out, (x,), back)

    def outer(self, a, b):
        """Row-wise outer product flattened: out[n, i*|b| + j] = a[n, i] * b[n, j]."""
        av, bv = a.value, b.value
        n, ka, kb = av.shape[0], av.shape[1], bv.shape[1]

        def back(g):
            g3 = g.reshape(n, ka, kb)
            return (g3 * bv[:, None, :]).sum(axis=2), (g3 * av[:, :, None]).sum(axis=1)

        return self._record((av[:, :, None] * bv[:, None, :]).reshape(n, ka * kb), (a, b), back)

    def cols(self, x, start: int, stop: int):
        shape = x.value.shape

        def back(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return self._record(x.value[:, start:stop], (x,), back)

    def rows(self, x, start: int, stop: int):
        shape = x.value.shape

        def back(g):
            full = np.zeros(shape)
            full[start:stop] = g
            return (full,)

        return self._record(x.value[start:stop], (x,), back)

    def concat(self, xs, axis: int = 1):
        xs = [self._as_var(x) for x in xs]
        sizes = [x.value.shape[axis] for x in xs]
        bounds = np.cumsum([0] + sizes)

        def back(g):
            if axis == 1:
                return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))
            return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(xs)))

        return self._record(np.concatenate([x.value for x in xs], axis=axis), tuple(xs), back)

    def pick(self, x, idx):
        """x[i, idx[i]] as an (n, 1) column."""
        idx = np.asarray(idx, dtype=np.int64)
        n = x.value.shape[0]
        shape = x.value.shape

        def back(g):
            full = np.zeros(shape)
            full[np.arange(n), idx] = g[:, 0]
            return (full,)

        return self._record(x.value[np.arange(n), idx][:, None], (x,), back)

    def row_sum(self, x):
        shape = x.value.shape
        return self._record(x.value.sum(axis=1, keepdims=True), (x,),
                            lambda g: (np.broadcast_to(g, shape).copy(),))

    def col_mean(self, x):
        """Mean over rows, kept as a (1, k) row."""
        shape = x.value.shape
        n = shape[0]
        return self._record(x.value.mean(axis=0, keepdims=True), (x,),
                            lambda g: (np.broadcast_to(g / n, shape).copy(),))

    def total(self, x):
        shape = x.value.shape
        return self._record(np.array([[x.value.sum()]]), (x,),
                            lambda g: (np.full(shape, g[0, 0]),))

    def mean(self, x):
        shape = x.value.shape
        n = x.value.size
        return self._record(np.array([[x.value.mean()]]), (x,),
                            lambda g: (np.full(shape, g[0, 0] / n),))

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every registered parameter."""
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for out, inputs, back in reversed(self.records):
            g = grads[out]
            if g is None or out > loss.index:
                continue
            for x, gx in zip(inputs, back(g)):
                if not x.requires_grad:
                    continue
                grads[x.index] = gx if grads[x.index] is None else grads[x.index] + gx
        return {
            name: (grads[v.index] if grads[v.index] is not None else np.zeros_like(v.value))
            for name, v in self.params.items()
        }


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    return tape.backward(loss)
