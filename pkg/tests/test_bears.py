import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsaware.bears import (BearsConfig, Ensemble, MCDropout, entropy_penalty, ensemble_concept_probs,
                           ensemble_label_dist, kl_repulsion, load_model, mc_dropout_probs, read_manifest,
                           save_model, train_deep_ensemble, train_ensemble, train_member, train_predictor)
from rsaware.knowledge import ConceptDistribution, ConceptSchema, ObjectSlot, Reasoner, Variable, parse_knowledge
from rsaware.nesy import build_predictor
from rsaware.rs import empirical_concept_table
from rsaware.tasks import generate_dataset

from conftest import digit_schema, fixed_predictor, random_dist

BIG = 60.0


def two_kind_reasoner(n=5):
    """d1 and d2 on separate encoders so point masses can differ per slot."""
    s = ConceptSchema((Variable("d1", n), Variable("d2", n)),
                      (ObjectSlot("l", "a", ("d1",)), ObjectSlot("r", "b", ("d2",))),
                      {"a": ("digit",), "b": ("digit",)})
    return Reasoner(parse_knowledge("y := d1 + d2;", s))


def onehot_bias(v, n=5):
    b = np.zeros(n)
    b[v] = BIG
    return b


def dist(schema, **rows):
    return ConceptDistribution(schema, {k: np.atleast_2d(np.asarray(v, float)) for k, v in rows.items()})


def closed_form_kl(p, priors, t):
    r = sum(priors) / len(priors)
    return math.log(t) - float(np.sum(p * np.log1p((t - 1) * r / p)))


# -- objective terms -----------------------------------------------------------

def test_kl_identical_is_one():
    s = digit_schema(3, 1)
    p = dist(s, d1=[0.2, 0.5, 0.3])
    assert kl_repulsion(p, [p], 2)[0] == pytest.approx(1.0, abs=1e-12)


def test_kl_disjoint_is_zero():
    s = digit_schema(2, 1)
    # with p_rest = 0 wherever p_new has mass, KL reaches its bound log t
    got = kl_repulsion(dist(s, d1=[1.0, 0.0]), [dist(s, d1=[0.0, 1.0])], 2)[0]
    assert got == pytest.approx(1 - closed_form_kl(np.array([1.0, 1e-12]), [np.array([0.0, 1.0])], 2)
                                / math.log(2), abs=1e-9)
    assert got == pytest.approx(0.0, abs=1e-9)


def test_kl_three_members_hand_value():
    s = digit_schema(3, 1)
    a, b = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.3, 0.6])
    p = (a + b) / 2
    priors = [dist(s, d1=a), dist(s, d1=b)]
    got = kl_repulsion(dist(s, d1=p), priors, 3)[0]
    # p equals the priors' mean, so the log term is log 3 everywhere and KL vanishes
    assert got == pytest.approx(1 - closed_form_kl(p, [a, b], 3) / math.log(3), abs=1e-12)
    assert got == pytest.approx(1.0, abs=1e-12)
    q = np.array([0.5, 0.4, 0.1])
    got = kl_repulsion(dist(s, d1=q), priors, 3)[0]
    assert 0 < got < 1
    assert got == pytest.approx(1 - closed_form_kl(q, [a, b], 3) / math.log(3), abs=1e-12)


def test_kl_argument_checks():
    s = digit_schema(3, 1)
    p = dist(s, d1=[1 / 3] * 3)
    with pytest.raises(ValueError):
        kl_repulsion(p, [], 1)
    with pytest.raises(ValueError):
        kl_repulsion(p, [p, p], 2)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_kl_in_unit_interval(seed, t):
    rng = np.random.default_rng(seed)
    s = digit_schema(4, 2)
    priors = [random_dist(s, rng, n=3, concentration=0.2) for _ in range(t - 1)]
    v = kl_repulsion(random_dist(s, rng, n=3, concentration=0.2), priors, t)
    assert np.all(v >= -1e-12) and np.all(v <= 1 + 1e-12)


def test_entropy_penalty_cases():
    s = digit_schema(4, 2)
    assert entropy_penalty(ConceptDistribution.uniform(s))[0] == pytest.approx(0.0, abs=1e-12)
    assert entropy_penalty(ConceptDistribution.point_mass(s, [(1, 2)]))[0] == pytest.approx(1.0, abs=1e-9)
    b = digit_schema(2, 1)
    assert entropy_penalty(dist(b, d1=[0.5, 0.5]))[0] == pytest.approx(0.0, abs=1e-12)


# -- ensembles of hand-built members ---------------------------------------------

def test_ensemble_mixture_of_point_masses():
    r = two_kind_reasoner()
    m1 = fixed_predictor(r, {"a": onehot_bias(2), "b": onehot_bias(3)})
    m2 = fixed_predictor(r, {"a": onehot_bias(3), "b": onehot_bias(2)})
    ens = Ensemble([m1, m2])
    x = np.zeros((1, 6))
    p = ensemble_concept_probs(ens, x)
    np.testing.assert_allclose(p["d1"][0], [0, 0, 0.5, 0.5, 0], atol=1e-11)
    py = ensemble_label_dist(ens, x)[0]
    # each member puts its mass on 2 + 3 = 5
    want = (m1.label_dist(x) + m2.label_dist(x))[0] / 2
    np.testing.assert_allclose(py, want)
    assert py[5] == pytest.approx(1.0, abs=1e-10)


def test_singleton_and_identical_ensembles():
    r = two_kind_reasoner()
    m = build_predictor(r, 3, seed=2)
    x = np.random.default_rng(0).normal(size=(4, 6))
    for ens in (Ensemble([m]), Ensemble([m, m.copy(), m.copy()])):
        np.testing.assert_allclose(ens.concept_probs(x)["d2"], m.concept_probs(x)["d2"], atol=1e-15)
        np.testing.assert_allclose(ens.label_dist(x), m.label_dist(x), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_ensemble_label_dist_equals_mixture_joint(seed, k):
    r = two_kind_reasoner(4)
    members = [build_predictor(r, 3, seed=seed + i, hidden=(4,)) for i in range(k)]
    x = np.random.default_rng(seed).normal(size=(2, 6))
    brute = np.zeros((2, len(r.label_space)))
    for m in members:
        p = m.concept_probs(x)
        for a, b in itertools.product(range(4), repeat=2):
            brute[:, r.label_space.index(a + b)] += p["d1"][:, a] * p["d2"][:, b] / k
    np.testing.assert_allclose(Ensemble(members).label_dist(x), brute, atol=1e-12)


def test_mc_dropout():
    r = two_kind_reasoner()
    x = np.random.default_rng(1).normal(size=(3, 6))
    no_drop = build_predictor(r, 3, seed=3, dropout=0.0)
    np.testing.assert_allclose(mc_dropout_probs(no_drop, x, 5, 0)["d1"], no_drop.concept_probs(x)["d1"],
                               atol=1e-15)
    drop = build_predictor(r, 3, seed=3, dropout=0.5)
    a = mc_dropout_probs(drop, x, 30, 9)["d1"]
    np.testing.assert_array_equal(a, mc_dropout_probs(drop, x, 30, 9)["d1"])
    one = mc_dropout_probs(drop, x, 1, 9)["d1"]
    assert not np.allclose(one, drop.concept_probs(x)["d1"])
    np.testing.assert_allclose(MCDropout(drop, 30, 9).concept_probs(x)["d1"], a)


# -- training --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_half():
    from rsaware.tasks import mnist_half
    spec = mnist_half()
    ds = generate_dataset(spec, 0)
    tr = ds["train"]
    return spec, ds, tr.x[:400], tr.y[:400]


def quick(**kw):
    base = dict(ensemble_size=3, epochs=2, batch_size=64, lr=5e-3, seed=5, hidden=[16])
    return BearsConfig(**{**base, **kw})


def params_equal(a, b):
    pa, pb = a.param_blocks(), b.param_blocks()
    return pa.keys() == pb.keys() and all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_k1_equals_plain(small_half):
    spec, _, x, y = small_half
    r = spec.reasoner()
    cfg = quick(ensemble_size=1)
    ens = train_ensemble(r, spec.dim, x, y, cfg)
    assert params_equal(ens.members[0], train_predictor(r, spec.dim, x, y, cfg))


def test_first_member_equals_plain(small_half):
    spec, _, x, y = small_half
    r = spec.reasoner()
    ens = train_ensemble(r, spec.dim, x, y, quick())
    assert params_equal(ens.members[0], train_predictor(r, spec.dim, x, y, quick()))


def test_zero_gammas_match_independent_members(small_half):
    spec, _, x, y = small_half
    r = spec.reasoner()
    cfg = quick(gamma1=0.0, gamma2=0.0)
    ens = train_ensemble(r, spec.dim, x, y, cfg)
    for t in range(3):
        assert params_equal(ens.members[t], train_member(r, spec.dim, x, y, cfg, t))
    de = train_deep_ensemble(r, spec.dim, x, y, quick(gamma1=0.8))
    assert all(params_equal(a, b) for a, b in zip(ens.members, de.members))
    assert not params_equal(de.members[0], de.members[1])


def test_training_deterministic(small_half):
    spec, _, x, y = small_half
    r = spec.reasoner()
    a = train_ensemble(r, spec.dim, x, y, quick(gamma2=0.5))
    b = train_ensemble(r, spec.dim, x, y, quick(gamma2=0.5))
    assert all(params_equal(u, v) for u, v in zip(a.members, b.members))


def test_config_validation():
    with pytest.raises(ValueError):
        BearsConfig(ensemble_size=0)
    with pytest.raises(ValueError):
        BearsConfig(gamma1=-1.0)
    with pytest.raises(ValueError):
        BearsConfig(ensemble_size=2, seeds=[1])


def test_for_task_uses_defaults(small_half):
    spec = small_half[0]
    cfg = BearsConfig.for_task(spec, gamma1=None, epochs=3)
    assert cfg.gamma1 == spec.defaults["gamma1"] and cfg.epochs == 3
    assert cfg.hidden == spec.encoder["hidden"]


@pytest.fixture(scope="module")
def half_pair():
    """Members 1 and 2 of a bears run on MNIST-Half with default settings."""
    from rsaware.tasks import mnist_half
    spec = mnist_half()
    ds = generate_dataset(spec, 1)
    tr = ds["train"]
    cfg = BearsConfig.for_task(spec, ensemble_size=2, seed=11)
    return spec, ds, train_ensemble(spec.reasoner(), spec.dim, tr.x, tr.y, cfg)


def test_second_member_disagrees_on_shortcut_digits(half_pair):
    spec, ds, ens = half_pair
    te = ds["test"]
    tabs = [empirical_concept_table(m, te.x, te.g) for m in ens.members]
    rows = tabs[0].rows
    moved = [v for v in (2, 3, 4) if v in rows and
             np.argmax(tabs[0].probs[rows.index(v)]) != np.argmax(tabs[1].probs[rows.index(v)])]
    assert moved, "the repulsion term should move at least one shortcut-affected digit"


def test_checkpoint_round_trip(tmp_path, half_pair):
    spec, ds, ens = half_pair
    path = tmp_path / "m.json"
    save_model(ens, path, {"task_hash": spec.content_hash(), "ensemble_size": 2})
    back, manifest = load_model(path, spec.reasoner())
    assert manifest["ensemble_size"] == 2 and read_manifest(path) == manifest
    x = ds["test"].x[:20]
    np.testing.assert_array_equal(back.label_dist(x), ens.label_dist(x))


def test_corrupted_checkpoint(tmp_path, half_pair):
    spec = half_pair[0]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        load_model(bad, spec.reasoner())
    bad.write_text('{"format": "rsaware-model", "version": 1, "container": "single", "members": [{}]}')
    with pytest.raises(ValueError):
        load_model(bad, spec.reasoner())
