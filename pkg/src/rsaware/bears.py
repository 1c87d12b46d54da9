"""Ensemble training with knowledge-aware diversification, plus DE and MC-Dropout baselines.

Members are trained one after another.  From the second member on, the
per-example objective adds a repulsion term pushing the new member's
concept distribution away from the mixture of the members trained so far,
and optionally an entropy term.  With both weights at zero the procedure
is just a deep ensemble with derived seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .knowledge import ConceptDistribution, Reasoner
from .nesy import (PROB_FLOOR, NesyPredictor, _label_indices, build_predictor, concept_graph,
                   example_losses, supervision_term)
from .nn import AdamState, adam_step
from .tasks import derive_seed

MODEL_FORMAT = "rsaware-model"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# Objective terms
# ---------------------------------------------------------------------------


def _mixture(priors: list[ConceptDistribution]) -> dict[str, np.ndarray]:
    names = priors[0].schema.names
    return {n: sum(np.asarray(p[n]) for p in priors) / len(priors) for n in names}


def kl_repulsion(p_new: ConceptDistribution, priors: list[ConceptDistribution], t: int) -> np.ndarray:
    """Normalised repulsion term, one value per example (0 = disjoint, 1 = equal to the mixture).

    For each variable, (1/log t) * sum_c p(c) log(1 + (t-1) r(c)/p(c)) with
    r the mean of the prior members; the result is averaged over variables.
    """
    if t < 2:
        raise ValueError(f"repulsion needs t >= 2, got {t}")
    if len(priors) != t - 1:
        raise ValueError(f"member {t} needs {t - 1} prior members, got {len(priors)}")
    rest = _mixture(priors)
    names = p_new.schema.names
    total = 0.0
    for n in names:
        p = np.maximum(np.asarray(p_new[n], dtype=float), PROB_FLOOR)
        total = total + (p * np.log1p((t - 1) * rest[n] / p)).sum(axis=1)
    return total / (len(names) * math.log(t))


def entropy_penalty(p: ConceptDistribution) -> np.ndarray:
    """1 - H/H_max per example, H summed over variables, H_max = sum_j log|dom_j|."""
    h = 0.0
    h_max = 0.0
    for v in p.schema.variables:
        q = np.clip(np.asarray(p[v.name], dtype=float), PROB_FLOOR, 1.0)
        h = h - (q * np.log(q)).sum(axis=1)
        h_max += math.log(v.size)
    if h_max == 0:
        return np.zeros_like(h)
    return 1.0 - h / h_max


def _kl_tape(tape: Tape, probs: dict, rest: dict, t: int):
    acc = None
    for n, p in probs.items():
        r = tape.div(tape.constant((t - 1) * rest[n]), p)
        term = tape.row_sum(tape.mul(p, tape.log(tape.add_scalar(r, 1.0))))
        acc = term if acc is None else tape.add(acc, term)
    return tape.scale(acc, 1.0 / (len(probs) * math.log(t)))


def _entropy_tape(tape: Tape, probs: dict, schema):
    h_max = sum(math.log(v.size) for v in schema.variables)
    acc = None
    for n, p in probs.items():
        term = tape.row_sum(tape.mul(p, tape.log(p)))  # = -H_j
        acc = term if acc is None else tape.add(acc, term)
    return tape.add_scalar(tape.scale(acc, 1.0 / h_max), 1.0)


def _marginal_entropy_tape(tape: Tape, probs: dict, schema):
    """1 - H(batch-mean object joint)/H_max, averaged over object kinds; a (1, 1) Var.

    Low when the batch as a whole spreads over every value of each object
    domain, so it discourages collapsing several values onto one prediction.
    """
    acc = None
    for kind in schema.kinds:
        joints = []
        for o in schema.objects_of(kind):
            j = probs[o.variables[0]]
            for name in o.variables[1:]:
                j = tape.outer(j, probs[name])
            joints.append(j)
        pooled = tape.concat(joints, axis=0) if len(joints) > 1 else joints[0]
        m = tape.col_mean(pooled)
        h_max = math.log(m.value.shape[1])
        term = tape.add_scalar(tape.scale(tape.total(tape.mul(m, tape.log(m))), 1.0 / h_max), 1.0)
        acc = term if acc is None else tape.add(acc, term)
    return tape.scale(acc, 1.0 / len(schema.kinds))


# ---------------------------------------------------------------------------
# Configuration and models
# ---------------------------------------------------------------------------


@dataclass
class BearsConfig:
    ensemble_size: int = 5
    gamma1: float = 0.8
    gamma2: float = 0.0
    epochs: int = 20
    batch_size: int = 64
    lr: float = 5e-4
    decay: float = 0.95
    seed: int = 0
    seeds: list[int] | None = None  # explicit per-member seeds
    kind: str = "dpl"
    hidden: list[int] = field(default_factory=lambda: [64])
    dropout: float = 0.5
    w_sl: float = 1.0
    w_c: float = 0.0  # concept supervision weight (active learning)
    entropy_aid: float = 0.0  # batch-marginal entropy term for every member, including the first

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble size must be >= 1")
        for name in ("gamma1", "gamma2", "lr", "w_c", "entropy_aid"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {val}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if self.seeds is not None and len(self.seeds) != self.ensemble_size:
            raise ValueError("need one seed per ensemble member")

    def member_seed(self, t: int) -> int:
        return int(self.seeds[t]) if self.seeds is not None else derive_seed(self.seed, "member", t)

    @classmethod
    def for_task(cls, spec, **overrides) -> "BearsConfig":
        """Task defaults and encoder shape, with ``overrides`` (None values ignored) on top."""
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in spec.defaults.items() if k in names}
        kw["hidden"] = list(spec.encoder.get("hidden", [64]))
        kw["dropout"] = float(spec.encoder.get("dropout", 0.5))
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class Ensemble:
    members: list[NesyPredictor]
    weights: np.ndarray | None = None
    train_nll: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        k = len(self.members)
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-9:
            raise ValueError("mixing weights must be a probability vector")
        names = self.members[0].schema.names
        if any(m.schema.names != names for m in self.members):
            raise ValueError("members must share one schema")

    @property
    def schema(self):
        return self.members[0].schema

    @property
    def reasoner(self) -> Reasoner:
        return self.members[0].reasoner

    @property
    def label_space(self):
        return self.members[0].label_space

    def concept_probs(self, x) -> ConceptDistribution:
        return ensemble_concept_probs(self, x)

    def label_dist(self, x) -> np.ndarray:
        return ensemble_label_dist(self, x)


def ensemble_concept_probs(ens: Ensemble, x) -> ConceptDistribution:
    dists = [m.concept_probs(x) for m in ens.members]
    probs = {n: sum(w * d[n] for w, d in zip(ens.weights, dists)) for n in ens.schema.names}
    return ConceptDistribution(ens.schema, probs)


def ensemble_label_dist(ens: Ensemble, x) -> np.ndarray:
    return sum(w * m.label_dist(x) for w, m in zip(ens.weights, ens.members))


@dataclass
class MCDropout:
    """A single predictor queried with dropout active, averaged over ``samples`` passes."""

    predictor: NesyPredictor
    samples: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one MC sample")

    @property
    def schema(self):
        return self.predictor.schema

    @property
    def reasoner(self):
        return self.predictor.reasoner

    @property
    def label_space(self):
        return self.predictor.label_space

    def _passes(self, x):
        rng = np.random.default_rng(self.seed)
        for _ in range(self.samples):
            yield self.predictor.concept_probs(x, "train", rng)

    def concept_probs(self, x) -> ConceptDistribution:
        return mc_dropout_probs(self.predictor, x, self.samples, self.seed)

    def label_dist(self, x) -> np.ndarray:
        pred = self.predictor
        if pred.kind == "sl":
            # the head has no dropout; feed it the averaged passes' logits is not defined,
            # so average the head outputs of each stochastic pass instead
            out = 0.0
            rng = np.random.default_rng(self.seed)
            from .nesy import _head_logprobs
            for _ in range(self.samples):
                tape = Tape()
                _, logits, pv = concept_graph(pred, tape, x, "train", rng)
                out = out + np.exp(_head_logprobs(pred, tape, logits, pv).value)
            return out / self.samples
        return sum(pred.reasoner.label_probs(d.probs) for d in self._passes(x)) / self.samples


def mc_dropout_probs(pred: NesyPredictor, x, samples: int = 30, seed: int = 0) -> ConceptDistribution:
    """Average of ``samples`` train-mode passes with independent dropout masks."""
    if samples < 1:
        raise ValueError("need at least one MC sample")
    rng = np.random.default_rng(seed)
    acc = None
    for _ in range(samples):
        d = pred.concept_probs(x, "train", rng)
        acc = dict(d.probs) if acc is None else {n: acc[n] + d[n] for n in acc}
    return ConceptDistribution(pred.schema, {n: v / samples for n, v in acc.items()})


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def mean_nll(model, x, y) -> float:
    """Mean -log p(y|x) under ``model`` (predictor or ensemble)."""
    idx = _label_indices(model if isinstance(model, NesyPredictor) else model.members[0], y)
    p = model.label_dist(x)[np.arange(len(idx)), idx]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def train_member(reasoner: Reasoner, dim: int, x, y, config: BearsConfig, t: int = 0,
                 priors: list[NesyPredictor] = (), reveals=(), init: NesyPredictor | None = None,
                 ) -> NesyPredictor:
    """Train ensemble member ``t`` (0-based) against the frozen ``priors``.

    ``reveals`` holds (row, variable, value) concept annotations on ``x``;
    they enter through the supervision term weighted by ``config.w_c``.
    ``init`` warm-starts from existing parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    seed = config.member_seed(t)
    if init is None:
        pred = build_predictor(reasoner, dim, seed, config.kind, config.hidden, config.dropout,
                               w_sl=config.w_sl)
    else:
        pred = init.copy()
    y_idx = _label_indices(pred, y)
    priors = list(priors)
    use_kl = bool(priors) and config.gamma1 > 0
    use_ent = bool(priors) and config.gamma2 > 0
    rest = None
    if use_kl:
        # priors are frozen and evaluated in eval mode, so one pass covers every batch
        rest = _mixture([m.concept_probs(x) for m in priors])
    by_row: dict[int, list] = {}
    for r, name, v in reveals:
        by_row.setdefault(int(r), []).append((name, int(v)))

    order_rng = np.random.default_rng(derive_seed(seed, "batches"))
    drop_rng = np.random.default_rng(derive_seed(seed, "dropout"))
    state = AdamState(lr=config.lr, decay=config.decay)
    blocks = pred.param_blocks()
    for _ in range(config.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = perm[start:start + config.batch_size]
            tape = Tape()
            probs, logits, pv = concept_graph(pred, tape, x[rows], "train", drop_rng)
            per = example_losses(pred, tape, probs, logits, pv, y_idx[rows], "train", drop_rng)
            if use_kl:
                sub = {k: v[rows] for k, v in rest.items()}
                per = tape.add(per, tape.scale(_kl_tape(tape, probs, sub, len(priors) + 1), config.gamma1))
            if use_ent:
                per = tape.add(per, tape.scale(_entropy_tape(tape, probs, pred.schema), config.gamma2))
            loss = tape.mean(per)
            if config.entropy_aid > 0:
                aid = _marginal_entropy_tape(tape, probs, pred.schema)
                loss = tape.add(loss, tape.scale(aid, config.entropy_aid))
            if by_row and config.w_c > 0:
                batch_rev = [(i, name, v) for i, r in enumerate(rows) for name, v in by_row.get(int(r), ())]
                sup = supervision_term(pred, tape, probs, batch_rev, config.w_c)
                if sup is not None:
                    loss = tape.add(loss, sup)
            grads = tape.backward(loss)
            blocks = adam_step(blocks, grads, state)
            pred = pred.with_param_blocks(blocks)
        state.end_epoch()
    return pred


def train_predictor(reasoner: Reasoner, dim: int, x, y, config: BearsConfig, **kw) -> NesyPredictor:
    """Plain single-model training; identical to the first ensemble member."""
    return train_member(reasoner, dim, x, y, config, 0, (), **kw)


def train_ensemble(reasoner: Reasoner, dim: int, x, y, config: BearsConfig, reveals=(),
                   init: Ensemble | None = None) -> Ensemble:
    members: list[NesyPredictor] = []
    for t in range(config.ensemble_size):
        start = init.members[t] if init is not None else None
        members.append(train_member(reasoner, dim, x, y, config, t, members, reveals, start))
    return Ensemble(members, None, [mean_nll(m, x, y) for m in members])


def train_deep_ensemble(reasoner: Reasoner, dim: int, x, y, config: BearsConfig, reveals=(),
                        init: Ensemble | None = None) -> Ensemble:
    """Independent members with per-member seeds and no diversification terms."""
    plain = BearsConfig(**{**asdict(config), "gamma1": 0.0, "gamma2": 0.0})
    members = [
        train_member(reasoner, dim, x, y, plain, t, (), reveals,
                     init.members[t] if init is not None else None)
        for t in range(plain.ensemble_size)
    ]
    return Ensemble(members, None, [mean_nll(m, x, y) for m in members])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model, path, manifest: dict) -> None:
    """JSON container of member predictors plus a manifest (method, K, seeds, gammas, task hash)."""
    if isinstance(model, Ensemble):
        members, extra = model.members, {"weights": model.weights.tolist(), "train_nll": model.train_nll}
        container = "ensemble"
    elif isinstance(model, MCDropout):
        members, extra = [model.predictor], {"samples": model.samples, "seed": model.seed}
        container = "mcdo"
    else:
        members, extra, container = [model], {}, "single"
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "container": container,
        "manifest": manifest,
        "members": [m.to_dict() for m in members],
        **extra,
    }
    Path(path).write_text(json.dumps(doc))


def _read_checkpoint(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValueError(f"corrupted checkpoint {path}: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path} is not a version-{MODEL_VERSION} model checkpoint")
    return doc


def read_manifest(path) -> dict:
    """The manifest stored in a checkpoint, without rebuilding the model."""
    return _read_checkpoint(path).get("manifest", {})


def load_model(path, reasoner: Reasoner):
    """Inverse of :func:`save_model`; returns ``(model, manifest)``."""
    doc = _read_checkpoint(path)
    try:
        members = [NesyPredictor.from_dict(m, reasoner) for m in doc["members"]]
        if doc["container"] == "ensemble":
            model = Ensemble(members, np.asarray(doc["weights"]), list(doc.get("train_nll", [])))
        elif doc["container"] == "mcdo":
            model = MCDropout(members[0], int(doc["samples"]), int(doc["seed"]))
        else:
            model = members[0]
    except (KeyError, TypeError, IndexError) as e:
        raise ValueError(f"corrupted checkpoint {path}: {e!r}") from None
    return model, doc["manifest"]
