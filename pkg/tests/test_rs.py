import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsaware.bears import Ensemble
from rsaware.knowledge import Reasoner, parse_knowledge
from rsaware.rs import (AlphaMap, ConceptTable, SearchBudgetExceeded, check_map, count_rs, decompose_table,
                        empirical_concept_table, entropy_bounds, enumerate_optimal_maps, equivalence_sets,
                        max_entropy_mixture, mixture_summary, mixture_table, naive_optimal_maps,
                        project_simplex, rs_report)

from conftest import digit_schema, fixed_predictor

HALF_MAPS = {(0, 1, 2, 3, 4), (0, 1, 3, 2, 3), (0, 1, 4, 1, 2)}


@pytest.fixture
def half_maps(half):
    return enumerate_optimal_maps(half.knowledge_expr(), half.support)


def images(maps, kind="digit"):
    return {dict(m.images)[kind] for m in maps.maps}


def test_half_three_maps(half_maps):
    assert images(half_maps) == HALF_MAPS
    assert count_rs(half_maps) == (3, 2)
    assert half_maps.maps[half_maps.identity_index()].is_identity_on(half_maps.constrained)


def test_empty_support_all_maps(half):
    maps = naive_optimal_maps(half.knowledge_expr(), [])
    assert len(maps) == 5 ** 5


def test_identity_only():
    s = digit_schema(3, 2)
    support = [(a, b) for a in range(3) for b in range(3)]
    e = parse_knowledge("a := d1; b := d2;", s)
    maps = enumerate_optimal_maps(e, support)
    assert count_rs(maps) == (1, 0)
    eq = equivalence_sets(maps)
    assert eq["digit"] == {v: [v] for v in range(3)}
    assert entropy_bounds(eq)["digit"] == {v: 0.0 for v in range(3)}


def test_equivalence_sets_half(half_maps):
    eq = equivalence_sets(half_maps)["digit"]
    assert eq[0] == [0]
    assert eq[2] == [2, 3, 4]
    bounds = entropy_bounds(equivalence_sets(half_maps))["digit"]
    assert bounds[2] == pytest.approx(math.log(3), abs=1e-12)
    assert bounds[0] == 0.0


def test_entropy_bound_two():
    assert entropy_bounds({"k": {0: [0, 1]}})["k"][0] == pytest.approx(math.log(2))


def test_budget_exceeded(half):
    with pytest.raises(SearchBudgetExceeded):
        enumerate_optimal_maps(half.knowledge_expr(), half.support, node_budget=2)


def test_every_map_rechecked(traffic):
    maps = enumerate_optimal_maps(traffic.knowledge_expr(), traffic.support)
    assert all(check_map(traffic.knowledge_expr(), m, traffic.support) for m in maps.maps)
    assert count_rs(maps)[1] > 0  # red and ped can be swapped or merged


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["y := d1 + d2;", "y := d1 == d2; z := d1 + d2 == 3;",
                                                   "y := d1 != d2 or d1 == 0;"]))
def test_backtracking_equals_naive(seed, src):
    s = digit_schema(4, 2)
    e = parse_knowledge(src, s)
    rng = np.random.default_rng(seed)
    pairs = list(itertools.product(range(4), repeat=2))
    support = [pairs[i] for i in rng.choice(len(pairs), size=rng.integers(1, 8), replace=False)]
    fast = [m.images for m in enumerate_optimal_maps(e, support).maps]
    assert fast == [m.images for m in naive_optimal_maps(e, support)]


# -- mixtures ----------------------------------------------------------------------

def test_project_simplex():
    w = project_simplex([0.2, 0.5, 2.0])
    assert w.sum() == pytest.approx(1.0) and np.all(w >= 0)
    np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_project_simplex_is_closest(v):
    w = project_simplex(v)
    assert w.sum() == pytest.approx(1.0, abs=1e-9) and np.all(w >= -1e-12)
    rng = np.random.default_rng(len(v))
    for u in rng.dirichlet(np.ones(len(v)), size=20):
        assert np.sum((w - v) ** 2) <= np.sum((u - v) ** 2) + 1e-9


def test_max_entropy_half(half, half_maps):
    res = max_entropy_mixture(half_maps, half.prior_weights())
    for v in (2, 3, 4):
        assert res.per_value["digit"][v] == pytest.approx(math.log(3), abs=1e-6)
    assert res.per_value["digit"][0] == 0.0 and res.per_value["digit"][1] == 0.0
    bounds = entropy_bounds(equivalence_sets(half_maps))["digit"]
    assert all(res.per_value["digit"][v] <= bounds[v] + 1e-9 for v in bounds)
    # every support pair with 2, 3 or 4 in a slot reaches log 3
    for g, h in res.per_support.items():
        if any(v in (2, 3, 4) for v in g):
            assert h == pytest.approx(math.log(3), abs=1e-6)


def test_max_entropy_beats_uniform_and_vertices(traffic):
    maps = enumerate_optimal_maps(traffic.knowledge_expr(), traffic.support)
    k = len(maps.maps)
    best = max_entropy_mixture(maps, traffic.prior_weights())
    for w in [np.full(k, 1 / k)] + list(np.eye(k)):
        assert best.entropy >= mixture_summary(maps, w, traffic.prior_weights()).entropy - 1e-9


def test_singleton_mixture():
    s = digit_schema(3, 2)
    maps = enumerate_optimal_maps(parse_knowledge("a := d1; b := d2;", s), [(0, 1), (2, 2)])
    res = max_entropy_mixture(maps)
    assert list(res.weights) == [1.0] and res.entropy == 0.0


def test_agreeing_maps_zero_entropy(half):
    from rsaware.rs import OptimalMapSet
    support = [(0, 0), (0, 1), (1, 1)]
    maps = [AlphaMap.from_dict({"digit": [0, 1, 2, 3, 4]}), AlphaMap.from_dict({"digit": [0, 1, 4, 4, 4]})]
    sub = OptimalMapSet(half.schema, maps, support, {"digit": [0, 1]}, {"digit": [2, 3, 4]})
    for w in ([0.5, 0.5], [0.9, 0.1]):
        assert mixture_summary(sub, w).entropy == 0.0


# -- tables ------------------------------------------------------------------------

def test_decompose_recovers_weights(half_maps):
    res = decompose_table(mixture_table(half_maps, [0.2, 0.3, 0.5]), half_maps)
    np.testing.assert_allclose(res.weights, [0.2, 0.3, 0.5], atol=1e-6)
    assert res.residual <= 1e-6


def test_decompose_identity(half_maps):
    tab = ConceptTable("object", [0, 1, 2, 3, 4], [0, 1, 2, 3, 4], np.eye(5), "digit")
    res = decompose_table(tab, half_maps)
    np.testing.assert_allclose(res.weights, np.eye(3)[half_maps.identity_index()], atol=1e-6)


def test_decompose_infeasible(half_maps):
    p = np.eye(5)
    p[0] = [0, 0, 0, 0, 1]  # 0 -> 4 is produced by no optimal map
    res = decompose_table(ConceptTable("object", [0, 1, 2, 3, 4], [0, 1, 2, 3, 4], p, "digit"), half_maps)
    assert res.residual > 0.1


def test_vector_level_decomposition(half_maps):
    tab = mixture_table(half_maps, [0.6, 0.1, 0.3], level="vector")
    res = decompose_table(tab, half_maps)
    np.testing.assert_allclose(res.weights, [0.6, 0.1, 0.3], atol=1e-5)


def test_empirical_table_point_mass_and_uniform(half):
    r = half.reasoner()
    g = np.array(half.support * 3)
    x = np.zeros((len(g), 2 * half.dim))
    uniform = fixed_predictor(r, dim=half.dim)
    tab = empirical_concept_table(uniform, x, g)
    np.testing.assert_allclose(tab.probs, 0.2)
    assert tab.missing == [] and tab.rows == [0, 1, 2, 3, 4]


def perfect_digit_model(reasoner, dim, perm=None):
    """Reads the digit off a one-hot input embedding; ``perm`` relabels the output."""
    from rsaware.nesy import NesyPredictor
    from rsaware.nn import ParameterSet
    perm = list(range(5)) if perm is None else list(perm)
    w = np.zeros((dim, 5))
    for v in range(5):
        w[v, perm[v]] = 60.0
    return NesyPredictor(reasoner, dim, {"digit": ParameterSet([w], [np.zeros(5)])})


def onehot_inputs(g, dim):
    x = np.zeros((len(g), 2 * dim))
    for i, (a, b) in enumerate(g):
        x[i, a] = 1.0
        x[i, dim + b] = 1.0
    return x


def test_empirical_table_perfect_and_mixture(half, half_maps):
    r = half.reasoner()
    g = np.array([(a, b) for a in range(5) for b in range(5)])
    x = onehot_inputs(g, half.dim)
    tab = empirical_concept_table(perfect_digit_model(r, half.dim), x, g)
    np.testing.assert_allclose(tab.probs, np.eye(5), atol=1e-20 + 1e-11)
    m1 = perfect_digit_model(r, half.dim, (0, 1, 3, 2, 3))
    m2 = perfect_digit_model(r, half.dim, (0, 1, 4, 1, 2))
    emp = empirical_concept_table(Ensemble([m1, m2]), x, g)
    want = mixture_table(half_maps, [0.0, 0.5, 0.5], rows=emp.rows)
    np.testing.assert_allclose(emp.probs, want.probs, atol=1e-10)


def test_rs_report_fields(half):
    rep = rs_report(half.knowledge_expr(), half.support, half.prior_weights())
    assert rep["total_optima"] == 3 and rep["rs_count"] == 2
    assert rep["equivalence_sets"]["digit"]["2"] == [2, 3, 4]
    assert AlphaMap.from_dict({"digit": [0, 1, 2, 3, 4]}).as_dict() == {"digit": (0, 1, 2, 3, 4)}
    assert sorted(tuple(m["digit"]) for m in rep["maps"]) == sorted(HALF_MAPS)


def test_even_odd_count(half):
    from rsaware.tasks import mnist_even_odd
    spec = mnist_even_odd()
    maps = enumerate_optimal_maps(spec.knowledge_expr(), spec.support)
    # even and odd digits form two independent 4-equation systems with 6 digit solutions each
    assert count_rs(maps) == (36, 35)
    assert Reasoner(spec.knowledge_expr())  # sanity: the task compiles
