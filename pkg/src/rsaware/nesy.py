"""Neuro-symbolic predictors: a shared-per-kind concept encoder plus exact reasoning.

Input rows concatenate one embedding of width ``dim`` per object slot, in
schema object order.  Every object kind owns one MLP; objects of the same
kind are pushed through it together, so their concept extractors are tied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .knowledge import ConceptDistribution, ConceptSchema, KnowledgeError, Reasoner
from .nn import ParameterSet, forward, init_params

PROB_FLOOR = 1e-12


@dataclass
class NesyPredictor:
    reasoner: Reasoner
    dim: int
    encoders: dict[str, ParameterSet]
    kind: str = "dpl"  # "dpl" or "sl"
    head: ParameterSet | None = None
    w_sl: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dpl", "sl"):
            raise ValueError(f"predictor kind must be 'dpl' or 'sl', got {self.kind!r}")
        schema = self.schema
        for k in schema.kinds:
            enc = self.encoders[k]
            if enc.sizes[0] != self.dim or enc.sizes[-1] != sum(schema.layout(k)):
                raise ValueError(f"encoder for kind {k!r} has sizes {enc.sizes}, expected "
                                 f"{self.dim} -> ... -> {sum(schema.layout(k))}")
        if self.kind == "sl":
            if self.head is None:
                raise ValueError("an SL predictor needs a label head")
            n_logits = sum(schema.sizes)
            if self.head.sizes[0] != n_logits or self.head.sizes[-1] != len(self.label_space):
                raise ValueError(f"label head sizes {self.head.sizes} do not match "
                                 f"{n_logits} concept logits / {len(self.label_space)} labels")

    @property
    def schema(self) -> ConceptSchema:
        return self.reasoner.schema

    @property
    def label_space(self):
        return self.reasoner.label_space

    @property
    def input_dim(self) -> int:
        return self.dim * len(self.schema.objects)

    # -- parameter plumbing -------------------------------------------------

    def param_blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for k, enc in self.encoders.items():
            out.update(enc.blocks(f"enc.{k}."))
        if self.head is not None:
            out.update(self.head.blocks("head."))
        return out

    def with_param_blocks(self, blocks: dict[str, np.ndarray]) -> "NesyPredictor":
        encs = {k: enc.with_blocks(blocks, f"enc.{k}.") for k, enc in self.encoders.items()}
        head = self.head.with_blocks(blocks, "head.") if self.head is not None else None
        return NesyPredictor(self.reasoner, self.dim, encs, self.kind, head, self.w_sl)

    def copy(self) -> "NesyPredictor":
        return self.with_param_blocks({k: v.copy() for k, v in self.param_blocks().items()})

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "w_sl": self.w_sl,
            "encoders": {k: e.to_dict() for k, e in self.encoders.items()},
            "head": self.head.to_dict() if self.head is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict, reasoner: Reasoner) -> "NesyPredictor":
        encs = {k: ParameterSet.from_dict(e) for k, e in d["encoders"].items()}
        head = ParameterSet.from_dict(d["head"]) if d.get("head") else None
        return cls(reasoner, int(d["dim"]), encs, d["kind"], head, float(d.get("w_sl", 1.0)))

    # -- inference ----------------------------------------------------------

    def concept_probs(self, x, mode: str = "eval", rng=None) -> ConceptDistribution:
        probs, _, _ = concept_graph(self, Tape(), x, mode, rng)
        return ConceptDistribution(self.schema, {k: v.value for k, v in probs.items()})

    def label_dist(self, x) -> np.ndarray:
        """p(y | x) over ``label_space``: exact reasoning for DPL, the label head for SL."""
        tape = Tape()
        probs, logits, pvars = concept_graph(self, tape, x, "eval", None)
        if self.kind == "sl":
            return np.exp(_head_logprobs(self, tape, logits, pvars).value)
        return self.reasoner.label_probs({k: v.value for k, v in probs.items()})


def build_predictor(reasoner: Reasoner, dim: int, seed: int, kind: str = "dpl",
                    hidden=(64,), dropout: float = 0.5, head_hidden: int = 50,
                    w_sl: float = 1.0) -> NesyPredictor:
    """Fresh predictor with Glorot-initialised encoders (and label head for SL)."""
    from .tasks import derive_seed

    schema = reasoner.schema
    encs = {
        k: init_params([dim, *hidden, sum(schema.layout(k))], derive_seed(seed, "encoder", k), dropout)
        for k in schema.kinds
    }
    head = None
    if kind == "sl":
        head = init_params([sum(schema.sizes), head_hidden, len(reasoner.label_space)],
                           derive_seed(seed, "head"), 0.0)
    return NesyPredictor(reasoner, dim, encs, kind, head, w_sl)


# ---------------------------------------------------------------------------
# Tape construction
# ---------------------------------------------------------------------------


def concept_graph(pred: NesyPredictor, tape: Tape, x, mode: str = "eval", rng=None,
                  param_vars: dict | None = None):
    """Record the concept extractor on ``tape``.

    Returns ``(probs, logits, param_vars)`` where ``probs`` and ``logits``
    map variable names to (n, size) Vars; probabilities are floored at
    ``PROB_FLOOR``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != pred.input_dim:
        raise ValueError(f"input width {x.shape[1]} != expected {pred.input_dim}")
    schema = pred.schema
    n = x.shape[0]
    if param_vars is None:
        param_vars = {name: tape.param(v, name) for name, v in pred.param_blocks().items()}
    if mode == "train" and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    slot_of = {o.name: j for j, o in enumerate(schema.objects)}
    probs, logits = {}, {}
    for kind in schema.kinds:
        objs = schema.objects_of(kind)
        stacked = np.concatenate(
            [x[:, slot_of[o.name] * pred.dim:(slot_of[o.name] + 1) * pred.dim] for o in objs], axis=0)
        out, _ = forward(pred.encoders[kind], stacked, mode, rng, tape, f"enc.{kind}.", param_vars)
        for q, o in enumerate(objs):
            rows = tape.rows(out, q * n, (q + 1) * n) if len(objs) > 1 else out
            start = 0
            for name in o.variables:
                size = schema.size(name)
                z = tape.cols(rows, start, start + size) if len(o.variables) > 1 else rows
                logits[name] = z
                probs[name] = tape.clamp_min(tape.softmax(z), PROB_FLOOR)
                start += size
    return probs, logits, param_vars


def _label_indices(pred: NesyPredictor, y) -> np.ndarray:
    space = pred.label_space
    idx = np.empty(len(y), dtype=np.int64)
    for i, v in enumerate(y):
        try:
            idx[i] = space.index(v)
        except KnowledgeError:
            idx[i] = -1
        if idx[i] < 0 or not pred.reasoner.reachable[idx[i]]:
            raise KnowledgeError(f"label {v!r} of example {i} is not admissible under the knowledge")
    return idx


def _semantic_nll(pred: NesyPredictor, tape: Tape, probs: dict, y_idx: np.ndarray):
    """Per-example -log p(y | x; K) as an (n, 1) Var."""
    py = pred.reasoner.label_probs(probs, ops=tape)
    return tape.scale(tape.log(tape.clamp_min(tape.pick(py, y_idx), PROB_FLOOR)), -1.0)


def _head_logprobs(pred: NesyPredictor, tape: Tape, logits: dict, param_vars: dict,
                   mode: str = "eval", rng=None):
    z = tape.concat([logits[n] for n in pred.schema.names], axis=1)
    out, _ = forward(pred.head, z, mode, rng, tape, "head.", param_vars)
    return tape.log_softmax(out)


def example_losses(pred: NesyPredictor, tape: Tape, probs: dict, logits: dict, param_vars: dict,
                   y_idx: np.ndarray, mode: str = "eval", rng=None):
    """Per-example predictor loss: DPL NLL, or head CE + w_SL * semantic NLL for SL."""
    sem = _semantic_nll(pred, tape, probs, y_idx)
    if pred.kind == "dpl":
        return sem
    ce = tape.scale(tape.pick(_head_logprobs(pred, tape, logits, param_vars, mode, rng), y_idx), -1.0)
    if pred.w_sl == 0:
        return ce
    return tape.add(ce, tape.scale(sem, pred.w_sl))


def supervision_term(pred: NesyPredictor, tape: Tape, probs: dict, reveals, w_c: float):
    """w_c times the mean cross-entropy over revealed (row, variable, value) triples, or None."""
    reveals = list(reveals)
    if not reveals or w_c == 0:
        return None
    n = next(iter(probs.values())).value.shape[0]
    targets: dict[str, np.ndarray] = {}
    for row, name, value in reveals:
        size = pred.schema.size(name)
        if not 0 <= value < size:
            raise ValueError(f"revealed value {value} outside the domain of {name!r}")
        t = targets.setdefault(name, np.zeros((n, size)))
        t[row, value] = 1.0
    terms = [tape.total(tape.mul_const(tape.log(probs[name]), t)) for name, t in targets.items()]
    acc = terms[0]
    for t in terms[1:]:
        acc = tape.add(acc, t)
    return tape.scale(acc, -float(w_c) / len(reveals))


# ---------------------------------------------------------------------------
# Public losses
# ---------------------------------------------------------------------------


def concept_probs(pred: NesyPredictor, x, mode: str = "eval", rng=None) -> ConceptDistribution:
    return pred.concept_probs(x, mode, rng)


def dpl_nll(pred: NesyPredictor, x, y):
    """Mean -log p(y | x; K) and its gradients with respect to every parameter block."""
    tape = Tape()
    y_idx = _label_indices(pred, y)
    probs, _, _ = concept_graph(pred, tape, x)
    loss = tape.mean(_semantic_nll(pred, tape, probs, y_idx))
    return float(loss.value[0, 0]), tape.backward(loss)


def sl_loss(pred: NesyPredictor, x, y):
    """Head cross-entropy plus ``w_sl`` times the exact semantic term."""
    if pred.kind != "sl":
        raise ValueError("sl_loss needs an SL predictor")
    tape = Tape()
    y_idx = _label_indices(pred, y)
    probs, logits, pv = concept_graph(pred, tape, x)
    loss = tape.mean(example_losses(pred, tape, probs, logits, pv, y_idx))
    return float(loss.value[0, 0]), tape.backward(loss)


def concept_supervision_loss(pred: NesyPredictor, x, reveals, w_c: float):
    """``reveals`` holds (row of x, variable name, true value) triples."""
    tape = Tape()
    probs, _, _ = concept_graph(pred, tape, x)
    term = supervision_term(pred, tape, probs, reveals, w_c)
    if term is None:
        return 0.0, {k: np.zeros_like(v) for k, v in pred.param_blocks().items()}
    return float(term.value[0, 0]), tape.backward(term)
