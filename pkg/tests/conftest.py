import numpy as np
import pytest

from rsaware.knowledge import ConceptDistribution, ConceptSchema, ObjectSlot, Variable
from rsaware.tasks import mnist_half, traffic_mini


def digit_schema(n_values=5, n_digits=2):
    names = [f"d{i + 1}" for i in range(n_digits)]
    return ConceptSchema(
        tuple(Variable(n, n_values) for n in names),
        tuple(ObjectSlot(f"o{i}", "digit", (n,)) for i, n in enumerate(names)),
        {"digit": ("digit",)},
    )


def random_dist(schema, rng, n=1, concentration=1.0):
    return ConceptDistribution(schema, {
        v.name: rng.dirichlet(np.full(v.size, concentration), size=n) for v in schema.variables
    })


@pytest.fixture
def half():
    return mnist_half()


@pytest.fixture
def traffic():
    return traffic_mini()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, params: dict, h: float = 1e-5) -> dict:
    """Central differences of scalar ``f(params)`` with respect to every entry."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f(params)
            p[idx] = old - h
            down = f(params)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_rel_err(a: dict, b: dict) -> float:
    worst = 0.0
    for k in a:
        num = np.abs(a[k] - b[k])
        den = np.maximum(np.abs(a[k]) + np.abs(b[k]), 1e-3)  # floor keeps round-off on ~0 entries from dominating
        worst = max(worst, float(np.max(num / den)))
    return worst


def fixed_predictor(reasoner, bias=None, dim=3, kind="dpl", head=None, w_sl=1.0):
    """Input-independent predictor: one zero-weight linear layer per kind with the given bias."""
    from rsaware.nesy import NesyPredictor
    from rsaware.nn import ParameterSet

    encs = {}
    for k in reasoner.schema.kinds:
        n_out = sum(reasoner.schema.layout(k))
        b = np.zeros(n_out) if bias is None else np.asarray(bias[k] if isinstance(bias, dict) else bias, float)
        encs[k] = ParameterSet([np.zeros((dim, n_out))], [b])
    return NesyPredictor(reasoner, dim, encs, kind, head, w_sl)
