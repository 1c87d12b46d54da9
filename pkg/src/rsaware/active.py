"""Uncertainty-driven acquisition of object-level concept annotations.

Queries reveal every attribute of one object (e.g. its shape and colour).
Revealed annotations enter training through the concept supervision term;
the label likelihood keeps using every training example.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .bears import BearsConfig, Ensemble, MCDropout, train_deep_ensemble, train_ensemble, train_predictor
from .metrics import evaluate
from .tasks import GeneratedDataset, Oracle, derive_seed, object_values

STRATEGIES = ("entropy", "random")
# supervision weights for the single model and for ensemble members
DEFAULT_W_C = {"dpl": 25.0, "sl": 25.0, "bears": 10.0, "de": 10.0}


def object_joint_probs(model, x, obj) -> np.ndarray:
    """Joint over one object's attributes; ensembles average the members' product joints."""
    if isinstance(model, Ensemble):
        return sum(w * m.concept_probs(x).object_joint(obj) for w, m in zip(model.weights, model.members))
    if isinstance(model, MCDropout):
        rng = np.random.default_rng(model.seed)
        acc = 0.0
        for _ in range(model.samples):
            acc = acc + model.predictor.concept_probs(x, "train", rng).object_joint(obj)
        return acc / model.samples
    return model.concept_probs(x).object_joint(obj)


def joint_entropy(joint) -> np.ndarray:
    p = np.clip(np.atleast_2d(np.asarray(joint, dtype=float)), 1e-300, 1.0)
    return np.maximum(-(p * np.log(p)).sum(axis=1), 0.0)


def object_entropy(model, x, obj) -> np.ndarray:
    """Entropy of the object's attribute joint, one value per row of ``x``."""
    return joint_entropy(object_joint_probs(model, x, obj))


def pool_entropies(model, x) -> np.ndarray:
    """(n, n_objects) entropies for every object of every example."""
    return np.stack([object_entropy(model, x, o) for o in model.schema.objects], axis=1)


def select_queries(strategy: str, k: int, seed: int = 0, scores=None, pool_size: int | None = None,
                   exclude=()) -> list[int]:
    """Pick ``k`` pool indices not in ``exclude``.

    ``entropy`` takes the k largest scores, ties going to the lowest index;
    ``random`` draws uniformly without replacement from a seeded generator.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    n = len(scores) if scores is not None else pool_size
    if n is None:
        raise ValueError("need scores or a pool size")
    excluded = set(int(i) for i in exclude)
    candidates = np.array([i for i in range(n) if i not in excluded], dtype=int)
    if k > len(candidates):
        raise ValueError(f"cannot select {k} items from a pool of {len(candidates)}")
    if k == 0:
        return []
    if strategy == "entropy":
        if scores is None:
            raise ValueError("the entropy strategy needs scores")
        s = np.asarray(scores, dtype=float)[candidates]
        order = np.argsort(-s, kind="stable")
        return [int(i) for i in candidates[order[:k]]]
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(candidates, size=k, replace=False))


@dataclass
class ActiveConfig:
    method: str = "dpl"           # dpl | bears | de
    strategy: str = "entropy"
    budget: int = 50              # objects queried after initialisation
    k: int = 10
    init_value: tuple | None = None  # initial objects' attribute values; None = all zeros (red square)
    init_count: int = 10
    warm_start: bool = True
    w_c: float | None = None
    round_epochs: int | None = None  # epochs for warm-started rounds
    train: BearsConfig = field(default_factory=BearsConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.method not in DEFAULT_W_C:
            raise ValueError(f"unsupported method {self.method!r} for active learning")
        if self.k < 1 or self.budget < 0 or self.budget % self.k:
            raise ValueError("budget must be a nonnegative multiple of the batch size k")


@dataclass
class AcquisitionState:
    model: object
    revealed: list[int] = field(default_factory=list)   # flat pool indices (row * n_objects + slot)
    reveals: list[tuple] = field(default_factory=list)  # (row, variable, value)
    curve: list[tuple] = field(default_factory=list)    # (queries, acc_c, acc_y)
    spent: int = 0


def _fit(cfg: ActiveConfig, reasoner, dim, train, reveals, init):
    tc = cfg.train
    if init is not None and cfg.round_epochs is not None:
        tc = replace(tc, epochs=cfg.round_epochs)
    if not cfg.warm_start:
        init = None
    if cfg.method in ("dpl", "sl"):
        tc = replace(tc, kind=cfg.method, ensemble_size=1, seeds=None)
        return train_predictor(reasoner, dim, train.x, train.y, tc, reveals=reveals, init=init)
    if cfg.method == "bears":
        return train_ensemble(reasoner, dim, train.x, train.y, tc, reveals=reveals, init=init)
    return train_deep_ensemble(reasoner, dim, train.x, train.y, tc, reveals=reveals, init=init)


def initial_objects(ds: GeneratedDataset, value: tuple | None, count: int, seed: int) -> list[int]:
    """Flat pool indices of ``count`` training objects whose attributes equal ``value``.

    Objects of kinds with a different number of attributes never match.
    """
    schema = ds.spec.schema
    train = ds["train"]
    vals = object_values(schema, train.g)
    n_obj = len(schema.objects)
    if value is None:
        value = (0,) * len(schema.layout(schema.objects[0].kind))
    hits = [r * n_obj + j for r in range(len(train)) for j, o in enumerate(schema.objects)
            if len(value) == len(schema.layout(o.kind)) and vals[r, j] == schema.encode_object(o.kind, value)]
    if len(hits) < count:
        raise ValueError(f"only {len(hits)} training objects have value {value}")
    rng = np.random.default_rng(derive_seed(seed, "active", "init"))
    return sorted(int(i) for i in rng.choice(hits, size=count, replace=False))


def active_loop(ds: GeneratedDataset, cfg: ActiveConfig, seed: int = 0, eval_split: str = "test"):
    """Run acquisition rounds; returns the final :class:`AcquisitionState`.

    Each round retrains on all reveals so far, scores the test split, and
    (budget permitting) reveals ``k`` more objects.
    """
    spec = ds.spec
    schema = spec.schema
    reasoner = spec.reasoner()
    train, test = ds["train"], ds[eval_split]
    n_obj = len(schema.objects)
    oracle = Oracle(schema, train.g)
    if cfg.w_c is None:
        cfg = replace(cfg, w_c=DEFAULT_W_C[cfg.method])
    cfg = replace(cfg, train=replace(cfg.train, w_c=cfg.w_c, seed=derive_seed(seed, "active", cfg.method)))
    state = AcquisitionState(model=None)

    def reveal(indices):
        for idx in indices:
            row, j = divmod(idx, n_obj)
            for name in schema.objects[j].variables:
                state.reveals.append((row, name, oracle.reveal(row, name)))
            state.revealed.append(idx)

    init_value = tuple(cfg.init_value) if cfg.init_value is not None else None
    reveal(initial_objects(ds, init_value, cfg.init_count, seed) if cfg.init_count else [])
    model = None
    queries = 0
    rnd = 0
    while True:
        model = _fit(cfg, reasoner, spec.dim, train, state.reveals, model)
        rep = evaluate(model, test.x, test.g, test.y)
        state.curve.append((queries, rep.acc_c, rep.acc_y))
        if queries >= cfg.budget:
            break
        if cfg.strategy == "entropy":
            scores = pool_entropies(model, train.x).ravel()
            picks = select_queries("entropy", cfg.k, scores=scores, exclude=state.revealed)
        else:
            picks = select_queries("random", cfg.k, derive_seed(seed, "active", "random", rnd),
                                   pool_size=len(train) * n_obj, exclude=state.revealed)
        reveal(picks)
        queries += cfg.k
        state.spent = queries
        rnd += 1
    state.model = model
    return state


def write_curves(rows, path) -> None:
    """rows: dicts with strategy, method, seed, queries, acc_c, acc_y."""
    cols = ["strategy", "method", "seed", "queries", "acc_c", "acc_y"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: (repr(float(r[c])) if c.startswith("acc") else r[c]) for c in cols})
