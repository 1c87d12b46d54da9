"""Accuracy, calibration and uncertainty metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

ENTROPY_CLAMP = 1e-12


def _check(conf, correct):
    conf = np.asarray(conf, dtype=float).ravel()
    correct = np.asarray(correct, dtype=float).ravel()
    if conf.size == 0:
        raise ValueError("no predictions to score")
    if conf.shape != correct.shape:
        raise ValueError("confidences and correctness flags differ in length")
    return conf, correct


def bin_index(conf, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence: bins (l/M, (l+1)/M], with 0 going to the first bin."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return np.clip(np.searchsorted(edges, conf, side="left"), 1, n_bins) - 1


def reliability_bins(conf, correct, n_bins: int = 10) -> list[dict]:
    """Per-bin count, accuracy and mean confidence (the data behind a reliability diagram)."""
    conf, correct = _check(conf, correct)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    idx = bin_index(conf, n_bins)
    out = []
    for b in range(n_bins):
        m = idx == b
        k = int(m.sum())
        out.append({
            "bin": b,
            "lower": b / n_bins,
            "upper": (b + 1) / n_bins,
            "count": k,
            "acc": float(correct[m].mean()) if k else 0.0,
            "conf": float(conf[m].mean()) if k else 0.0,
        })
    return out


def ece(conf, correct, n_bins: int = 10) -> float:
    """Expected calibration error of top-label confidences ``conf``."""
    conf, correct = _check(conf, correct)
    n = conf.size
    return float(sum(b["count"] / n * abs(b["acc"] - b["conf"])
                     for b in reliability_bins(conf, correct, n_bins) if b["count"]))


def top_label(probs, truth):
    """(confidence, correct) arrays from a probability matrix and integer targets."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    pred = np.argmax(probs, axis=1)
    return probs[np.arange(len(pred)), pred], (pred == np.asarray(truth)).astype(float)


def ece_concepts(prob_mats, truths, n_bins: int = 10) -> float:
    """ECE over the pool of all concept predictions (one matrix/target vector per variable)."""
    confs, corrects = [], []
    for p, t in zip(prob_mats, truths):
        c, k = top_label(p, t)
        confs.append(c)
        corrects.append(k)
    return ece(np.concatenate(confs), np.concatenate(corrects), n_bins)


def mece(values) -> float:
    values = list(values)
    if not values:
        raise ValueError("mECE of an empty list")
    return float(np.mean(values))


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
    if pred.size == 0:
        raise ValueError("no predictions to score")
    return float(np.mean(pred == truth))


def ova_entropy(p) -> float:
    """Mean binary entropy of event probabilities ``p`` (clamped away from 0 and 1)."""
    p = np.clip(np.asarray(p, dtype=float).ravel(), ENTROPY_CLAMP, 1 - ENTROPY_CLAMP)
    if p.size == 0:
        raise ValueError("no probabilities")
    return float(-np.mean(p * np.log(p) + (1 - p) * np.log(1 - p)))


def f1_per_class(pred, truth, classes) -> np.ndarray:
    pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
    if pred.size == 0:
        raise ValueError("no predictions to score")
    out = []
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        out.append(0.0 if denom == 0 else 2 * tp / denom)
    return np.array(out)


def macro_f1(pred, truth, classes=None) -> float:
    """Mean per-class F1; a class with 0/0 precision or recall contributes 0."""
    if classes is None:
        classes = sorted(set(np.asarray(pred).ravel().tolist()) | set(np.asarray(truth).ravel().tolist()))
    return float(np.mean(f1_per_class(pred, truth, classes)))


def mean_f1(pred_mat, truth_mat, classes=(0, 1)) -> float:
    """Average of per-column macro F1 for several binary outputs."""
    pred_mat, truth_mat = np.atleast_2d(pred_mat), np.atleast_2d(truth_mat)
    return float(np.mean([macro_f1(pred_mat[:, j], truth_mat[:, j], classes)
                          for j in range(pred_mat.shape[1])]))


# ---------------------------------------------------------------------------
# Model-level report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    acc_y: float
    acc_c: float
    ece_y: float
    ece_c: float
    mece_c: float
    macro_f1: float
    mean_f1: float
    entropies: dict = field(default_factory=dict)  # "h_<attribute>_<value>" -> OVA entropy

    def row(self) -> dict:
        d = asdict(self)
        ent = d.pop("entropies")
        return {**d, **ent}


def evaluate(model, x, g, y, n_bins: int = 10) -> MetricsReport:
    """Score a model (anything with ``concept_probs``/``label_dist``) on one split."""
    schema = model.schema
    space = model.label_space
    g = np.asarray(g)
    concepts = model.concept_probs(x)
    py = model.label_dist(x)

    # labels: targets outside the label space (possible on OOD data) count as wrong
    lookup = {v: i for i, v in enumerate(space.values)}
    y_idx = np.array([lookup.get(tuple(v) if isinstance(v, (list, tuple)) else v, -1) for v in y])
    conf_y, correct_y = top_label(py, y_idx)
    pred_vals = [space.values[i] for i in np.argmax(py, axis=1)]
    if space.is_vector:
        pm = np.array(pred_vals)
        tm = np.array([list(v) for v in y])
        acc_y = float(np.mean(np.all(pm == tm, axis=1)))
        f1m = mean_f1(pm, tm)
        f1 = f1m
    else:
        acc_y = accuracy(np.array(pred_vals), np.array(y))
        f1 = macro_f1(np.array(pred_vals), np.array(y))
        f1m = f1

    mats = [concepts[n] for n in schema.names]
    truths = [g[:, schema.index(n)] for n in schema.names]
    acc_c = float(np.mean(np.concatenate([np.argmax(m, axis=1) == t for m, t in zip(mats, truths)])))
    ece_c = ece_concepts(mats, truths, n_bins)

    # per-component ECE and OVA entropies, pooling objects of one kind
    comp_ece, ent = [], {}
    for kind in schema.kinds:
        for k, attr in enumerate(schema.attribute_names(kind)):
            names = [o.variables[k] for o in schema.objects_of(kind)]
            comp_ece.append(ece_concepts([concepts[n] for n in names],
                                         [g[:, schema.index(n)] for n in names], n_bins))
            pooled = np.concatenate([concepts[n] for n in names], axis=0)
            for c in range(pooled.shape[1]):
                ent[f"h_{attr}_{c}"] = ova_entropy(pooled[:, c])
    return MetricsReport(acc_y, acc_c, float(ece(conf_y, correct_y, n_bins)), ece_c,
                         mece(comp_ece), f1, f1m, ent)


def concept_entropy_by_value(model, x, g, kind: str | None = None) -> dict:
    """OVA entropy of p(C = v | x) restricted to examples whose true value is v."""
    schema = model.schema
    concepts = model.concept_probs(x)
    g = np.asarray(g)
    out = {}
    for k_ in schema.kinds if kind is None else [kind]:
        for k, attr in enumerate(schema.attribute_names(k_)):
            names = [o.variables[k] for o in schema.objects_of(k_)]
            pooled = np.concatenate([concepts[n] for n in names], axis=0)
            truth = np.concatenate([g[:, schema.index(n)] for n in names])
            for v in range(pooled.shape[1]):
                m = truth == v
                if m.any():
                    out[(attr, v)] = ova_entropy(pooled[m, v])
    return out
