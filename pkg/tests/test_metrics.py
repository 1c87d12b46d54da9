import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsaware.knowledge import ConceptDistribution
from rsaware.metrics import (accuracy, bin_index, ece, ece_concepts, evaluate, f1_per_class, macro_f1, mean_f1,
                             mece, ova_entropy, reliability_bins)

from conftest import fixed_predictor


def binned_ece(conf, correct, m):
    """Reference ECE written straight from the binned definition."""
    conf, correct = np.asarray(conf, float), np.asarray(correct, float)
    total = 0.0
    for b in range(m):
        lo, hi = b / m, (b + 1) / m
        sel = (conf > lo) & (conf <= hi) if b else (conf >= 0) & (conf <= hi)
        if sel.any():
            total += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return total


# -- ECE ---------------------------------------------------------------------------

def test_ece_perfect():
    assert ece([1.0] * 5, [1] * 5) == 0.0


def test_ece_single_bin():
    assert ece([0.8] * 4, [1, 1, 0, 0]) == pytest.approx(0.3, abs=1e-12)


def test_ece_two_bins():
    got = ece([0.9, 0.9, 0.4, 0.4], [1, 1, 0, 0], n_bins=2)
    assert got == pytest.approx(0.5 * abs(1 - 0.9) + 0.5 * abs(0 - 0.4), abs=1e-12)


def test_bin_edges():
    # bins are (l/M, (l+1)/M]; zero joins the first bin
    np.testing.assert_array_equal(bin_index([0.0, 0.1, 0.1000001, 0.5, 1.0], 10), [0, 0, 1, 4, 9])


def test_ece_errors():
    with pytest.raises(ValueError):
        ece([], [])
    with pytest.raises(ValueError):
        ece([0.5], [1, 0])


def test_reliability_bins_counts():
    bins = reliability_bins([0.05, 0.95, 0.95], [0, 1, 0], 10)
    assert [b["count"] for b in bins] == [1] + [0] * 8 + [2]
    assert bins[9]["acc"] == 0.5


def test_ece_concepts_pool():
    p = np.tile([0.8, 0.2], (4, 1))
    t = [0, 0, 1, 1]
    assert ece_concepts([p, p], [t, t]) == pytest.approx(0.3, abs=1e-12)
    assert ece_concepts([np.eye(3)], [[0, 1, 2]]) == 0.0


def test_ece_concepts_uniform_five_way():
    p = np.full((10, 5), 0.2)
    truth = [0, 1, 2, 3, 4] * 2  # argmax is always 0 -> 20% accuracy
    assert ece_concepts([p], [truth]) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40),
       st.integers(1, 20))
def test_ece_matches_reference(records, m):
    conf = [r[0] for r in records]
    corr = [float(r[1]) for r in records]
    assert ece(conf, corr, m) == pytest.approx(binned_ece(conf, corr, m), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30), st.randoms())
def test_ece_order_invariant(records, rnd):
    shuffled = list(records)
    rnd.shuffle(shuffled)
    a = ece([r[0] for r in records], [r[1] for r in records])
    b = ece([r[0] for r in shuffled], [r[1] for r in shuffled])
    assert a == pytest.approx(b, abs=1e-12)


def test_ece_extra_empty_bins():
    conf = [0.25, 0.25, 0.75, 0.75]
    corr = [1, 0, 1, 1]
    # aligned boundaries: every refinement of 4 bins keeps the same occupied groups
    assert ece(conf, corr, 4) == pytest.approx(ece(conf, corr, 8), abs=1e-12)
    assert ece(conf, corr, 4) == pytest.approx(ece(conf, corr, 20), abs=1e-12)


def test_ece_zero_when_calibrated():
    conf = [0.75] * 4 + [0.5] * 2
    corr = [1, 1, 1, 0, 1, 0]
    assert ece(conf, corr) == pytest.approx(0.0, abs=1e-12)


# -- other metrics -----------------------------------------------------------------

def test_mece():
    assert mece([0.3]) == 0.3
    assert mece([0.2, 0.4]) == pytest.approx(0.3)
    assert mece([0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        mece([])


def test_ova_entropy_values():
    assert ova_entropy([0.5] * 3) == pytest.approx(math.log(2), abs=1e-12)
    assert ova_entropy([0.0, 1.0]) < 1e-10
    assert ova_entropy([0.9]) == pytest.approx(-(0.9 * math.log(0.9) + 0.1 * math.log(0.1)), abs=1e-12)
    assert ova_entropy([0.9]) == pytest.approx(0.3251, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_ova_entropy_symmetric(p):
    assert ova_entropy(p) == pytest.approx(ova_entropy([1 - v for v in p]), abs=1e-12)


def test_f1_cases():
    assert macro_f1([0, 1, 1], [0, 1, 1]) == 1.0
    # class 2 never predicted and never true: 0/0 contributes 0
    assert macro_f1([0, 1], [0, 1], classes=[0, 1, 2]) == pytest.approx(2 / 3)
    # TP = FP = FN = TN = 1 for each binary class
    assert macro_f1([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    np.testing.assert_allclose(f1_per_class([1, 1, 0, 0], [1, 0, 1, 0], [0, 1]), [0.5, 0.5])


def test_macro_f1_balanced_symmetric_errors_equals_accuracy():
    truth = [0] * 10 + [1] * 10
    pred = [0] * 7 + [1] * 3 + [1] * 7 + [0] * 3
    assert macro_f1(pred, truth) == pytest.approx(accuracy(pred, truth))


def test_mean_f1_columns():
    pred = np.array([[1, 0], [0, 0], [1, 1]])
    truth = np.array([[1, 0], [0, 0], [1, 1]])
    assert mean_f1(pred, truth) == 1.0


def test_accuracy_empty():
    with pytest.raises(ValueError):
        accuracy([], [])


# -- model-level report ------------------------------------------------------------

def test_evaluate_uniform_model(half):
    r = half.reasoner()
    model = fixed_predictor(r, dim=half.dim)
    g = np.array([(0, 0), (0, 1), (2, 3), (2, 4)])
    y = [0, 1, 5, 6]
    rep = evaluate(model, np.zeros((4, 2 * half.dim)), g, y)
    # concept argmax of a uniform factor is value 0
    assert rep.acc_c == pytest.approx(np.mean(g == 0))
    assert set(rep.entropies) == {f"h_digit_{v}" for v in range(5)}
    assert rep.entropies["h_digit_0"] == pytest.approx(-(0.2 * math.log(0.2) + 0.8 * math.log(0.8)))
    row = rep.row()
    assert "acc_y" in row and "h_digit_4" in row and "entropies" not in row


def test_evaluate_label_outside_space_counts_wrong(traffic):
    r = traffic.reasoner()
    model = fixed_predictor(r, dim=traffic.dim)
    g = np.array([(0, 0, 0)])
    rep = evaluate(model, np.zeros((1, 2 * traffic.dim)), g, [(2, 2)])
    assert rep.acc_y == 0.0


def test_evaluate_vector_labels(traffic):
    r = traffic.reasoner()
    big = {"light": [0.0, 50.0], "cue": [50.0, 0.0, 50.0, 0.0]}
    model = fixed_predictor(r, big, dim=traffic.dim)
    g = np.array([(1, 0, 0)] * 3)
    rep = evaluate(model, np.zeros((3, 2 * traffic.dim)), g, [(0, 1)] * 3)
    assert rep.acc_y == 1.0 and rep.acc_c == 1.0 and rep.mean_f1 == pytest.approx(0.5)
    assert isinstance(ConceptDistribution.uniform(traffic.schema), ConceptDistribution)
