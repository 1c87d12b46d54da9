"""Reasoning-shortcut analysis over per-object value maps.

A map assigns every object value of a kind to some value of the same kind;
applying it slot by slot turns a ground-truth concept vector g into
alpha(g).  A map is optimal when beta(alpha(g)) = beta(g) on the whole
training support; optimal maps other than the identity are shortcuts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .knowledge import ConceptSchema, KnowledgeExpr, compile_beta
from .tasks import object_values


class SearchBudgetExceeded(RuntimeError):
    pass


DEFAULT_NODE_BUDGET = 5_000_000


@dataclass(frozen=True)
class AlphaMap:
    """Per-kind value maps; ``images[kind][v]`` is the value v is sent to."""

    images: tuple  # tuple of (kind, tuple of ints), sorted by kind

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaMap":
        return cls(tuple(sorted((k, tuple(int(x) for x in v)) for k, v in d.items())))

    def as_dict(self) -> dict:
        return {k: v for k, v in self.images}

    def image(self, kind: str, v: int) -> int:
        return self.as_dict()[kind][v]

    def apply(self, schema: ConceptSchema, g) -> tuple[int, ...]:
        """alpha(g): map each object of g through its kind's table."""
        table = self.as_dict()
        vals = object_values(schema, np.asarray(g)[None, :])[0]
        out = [0] * len(schema.variables)
        for obj, v in zip(schema.objects, vals):
            for name, x in zip(obj.variables, schema.decode_object(obj.kind, table[obj.kind][v])):
                out[schema.index(name)] = x
        return tuple(out)

    def is_identity_on(self, constrained: dict) -> bool:
        table = self.as_dict()
        return all(table[k][v] == v for k, vs in constrained.items() for v in vs)


@dataclass
class OptimalMapSet:
    schema: ConceptSchema
    maps: list[AlphaMap]
    support: list[tuple[int, ...]]
    constrained: dict[str, list[int]]  # kind -> values occurring in the support
    free: dict[str, list[int]]         # kind -> values never occurring (left as identity)
    nodes: int = 0

    def __len__(self):
        return len(self.maps)

    def identity_index(self) -> int | None:
        for i, m in enumerate(self.maps):
            if m.is_identity_on(self.constrained):
                return i
        return None


def _support_values(schema: ConceptSchema, support) -> dict[str, list[int]]:
    """Constrained values per kind, in order of first occurrence."""
    seen: dict[str, list[int]] = {k: [] for k in schema.kinds}
    if not support:
        return seen
    vals = object_values(schema, np.asarray(support))
    for row in vals:
        for obj, v in zip(schema.objects, row):
            if int(v) not in seen[obj.kind]:
                seen[obj.kind].append(int(v))
    return seen


def check_map(expr: KnowledgeExpr, amap: AlphaMap, support) -> bool:
    beta = compile_beta(expr)
    return all(beta(amap.apply(expr.schema, g)) == beta(tuple(g)) for g in support)


def enumerate_optimal_maps(expr: KnowledgeExpr, support, node_budget: int = DEFAULT_NODE_BUDGET,
                           kinds: dict[str, list[int]] | None = None) -> OptimalMapSet:
    """Depth-first search over a(v) for each constrained value, pruning on fully assigned constraints.

    With an empty support every kind is searched over its full domain (all
    d^d maps).  ``kinds`` overrides which values are searched.
    """
    schema = expr.schema
    support = sorted({tuple(int(x) for x in g) for g in support})
    for g in support:
        schema.check_assignment(g)
    beta = compile_beta(expr)
    if kinds is None:
        constrained = _support_values(schema, support)
        if not support:
            constrained = {k: list(range(schema.object_domain(k))) for k in schema.kinds}
    else:
        constrained = {k: list(v) for k, v in kinds.items()}
    free = {k: [v for v in range(schema.object_domain(k)) if v not in constrained[k]] for k in schema.kinds}

    order = [(k, v) for k in schema.kinds for v in constrained[k]]
    pos = {kv: i for i, kv in enumerate(order)}
    obj_kinds = [o.kind for o in schema.objects]

    # decode table: kind -> object value -> attribute tuple
    decode = {k: [schema.decode_object(k, v) for v in range(schema.object_domain(k))] for k in schema.kinds}
    var_slots = [[schema.index(n) for n in o.variables] for o in schema.objects]
    n_vars = len(schema.variables)

    constraints_at: list[list] = [[] for _ in order]
    if support:
        vals = object_values(schema, np.asarray(support))
        for g, row in zip(support, vals):
            keys = [pos[(k, int(v))] for k, v in zip(obj_kinds, row)]
            constraints_at[max(keys)].append((keys, beta(g)))

    assign = [0] * len(order)
    domains = [schema.object_domain(k) for k, _ in order]
    found: list[tuple[int, ...]] = []
    nodes = 0

    def satisfied(depth: int) -> bool:
        for keys, target in constraints_at[depth]:
            c = [0] * n_vars
            for slots, kind, key in zip(var_slots, obj_kinds, keys):
                for i, x in zip(slots, decode[kind][assign[key]]):
                    c[i] = x
            if beta(tuple(c)) != target:
                return False
        return True

    def search(depth: int):
        nonlocal nodes
        if depth == len(order):
            found.append(tuple(assign))
            return
        for value in range(domains[depth]):
            nodes += 1
            if nodes > node_budget:
                raise SearchBudgetExceeded(f"search exceeded the node budget of {node_budget}")
            assign[depth] = value
            if satisfied(depth):
                search(depth + 1)

    search(0)
    maps = []
    for sol in found:
        tables = {k: list(range(schema.object_domain(k))) for k in schema.kinds}
        for (k, v), a in zip(order, sol):
            tables[k][v] = a
        maps.append(AlphaMap.from_dict(tables))
    maps.sort(key=lambda m: m.images)
    return OptimalMapSet(schema, maps, support, constrained, free, nodes)


def naive_optimal_maps(expr: KnowledgeExpr, support, limit: int = 10**6) -> list[AlphaMap]:
    """Reference enumeration over every per-kind table (only the constrained values matter)."""
    schema = expr.schema
    support = sorted({tuple(g) for g in support})
    constrained = _support_values(schema, support)
    if not support:
        constrained = {k: list(range(schema.object_domain(k))) for k in schema.kinds}
    kinds = schema.kinds
    spaces = []
    total = 1
    for k in kinds:
        d = schema.object_domain(k)
        total *= d ** d
        spaces.append(list(itertools.product(range(d), repeat=d)))
    if total > limit:
        raise SearchBudgetExceeded(f"{total} maps exceed the naive limit {limit}")
    out = {}
    for tables in itertools.product(*spaces):
        m = AlphaMap.from_dict(dict(zip(kinds, tables)))
        if check_map(expr, m, support):
            # canonical form: free values are mapped to themselves
            canon = {k: [t[v] if v in constrained[k] else v for v in range(len(t))]
                     for k, t in zip(kinds, tables)}
            out[AlphaMap.from_dict(canon).images] = None
    return [AlphaMap(images) for images in sorted(out)]


def count_rs(maps: OptimalMapSet) -> tuple[int, int]:
    total = len(maps)
    return total, total - (1 if maps.identity_index() is not None else 0)


def equivalence_sets(maps: OptimalMapSet) -> dict[str, dict[int, list[int]]]:
    """E(v) = {a(v) : a optimal} for every constrained value of every kind."""
    if not maps.maps:
        raise ValueError("no optimal maps")
    return {k: {v: sorted({m.image(k, v) for m in maps.maps}) for v in sorted(vs)}
            for k, vs in maps.constrained.items()}


def entropy_bounds(eq_sets: dict) -> dict[str, dict[int, float]]:
    return {k: {v: math.log(len(e)) for v, e in sets.items()} for k, sets in eq_sets.items()}


# ---------------------------------------------------------------------------
# Mixtures over optimal maps
# ---------------------------------------------------------------------------


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class MixtureResult:
    weights: np.ndarray
    entropy: float                  # prior-weighted entropy over support vectors
    per_support: dict               # g -> entropy of p(C | g)
    per_value: dict                 # kind -> value -> entropy of the object-level image
    iterations: int = 0
    residual: float | None = None


def _images(maps: OptimalMapSet, support):
    """For each g: (list of distinct alpha(g), index of each map's image)."""
    out = []
    for g in support:
        imgs = [m.apply(maps.schema, g) for m in maps.maps]
        uniq = sorted(set(imgs))
        out.append((uniq, np.array([uniq.index(c) for c in imgs])))
    return out


def _entropy(p):
    p = p[p > 0]
    return max(0.0, float(-(p * np.log(p)).sum()))


def _objective(w, images, prior):
    total = 0.0
    for (uniq, idx), pg in zip(images, prior):
        q = np.bincount(idx, weights=w, minlength=len(uniq))
        total += pg * _entropy(q)
    return total


def _value_entropies(maps: OptimalMapSet, w) -> dict:
    out = {}
    for k, vs in maps.constrained.items():
        d = maps.schema.object_domain(k)
        out[k] = {}
        for v in vs:
            q = np.zeros(d)
            for wi, m in zip(w, maps.maps):
                q[m.image(k, v)] += wi
            out[k][v] = _entropy(q)
    return out


def mixture_summary(maps: OptimalMapSet, w, prior=None) -> MixtureResult:
    support = maps.support
    prior = np.full(len(support), 1.0 / max(len(support), 1)) if prior is None else np.asarray(prior, float)
    images = _images(maps, support)
    per_g = {}
    for g, (uniq, idx) in zip(support, images):
        per_g[g] = _entropy(np.bincount(idx, weights=w, minlength=len(uniq)))
    return MixtureResult(np.asarray(w, float), _objective(np.asarray(w, float), images, prior),
                         per_g, _value_entropies(maps, w))


def max_entropy_mixture(maps: OptimalMapSet, prior=None, step: float = 0.1,
                        max_iter: int = 10_000, tol: float = 1e-9) -> MixtureResult:
    """Projected gradient ascent of the concave mixture entropy over the simplex."""
    k = len(maps.maps)
    if k == 0:
        raise ValueError("no optimal maps")
    support = maps.support
    prior = np.full(len(support), 1.0 / max(len(support), 1)) if prior is None else np.asarray(prior, float)
    images = _images(maps, support)
    w = np.full(k, 1.0 / k)
    best = _objective(w, images, prior)
    it = 0
    for it in range(1, max_iter + 1):
        grad = np.zeros(k)
        for (uniq, idx), pg in zip(images, prior):
            q = np.bincount(idx, weights=w, minlength=len(uniq))
            grad -= pg * (np.log(np.maximum(q[idx], 1e-300)) + 1.0)
        w_new = project_simplex(w + step * grad)
        val = _objective(w_new, images, prior)
        if val - best < tol:
            if val > best:
                w, best = w_new, val
            break
        w, best = w_new, val
    res = mixture_summary(maps, w, prior)
    res.iterations = it
    return res


# ---------------------------------------------------------------------------
# Concept tables and decomposition
# ---------------------------------------------------------------------------


@dataclass
class ConceptTable:
    """Rows p(c | g).  Object level: keys are values of one kind; vector level: concept tuples."""

    level: str              # "object" or "vector"
    rows: list
    cols: list
    probs: np.ndarray
    kind: str | None = None
    missing: list = field(default_factory=list)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (len(self.rows), len(self.cols)):
            raise ValueError("table shape does not match its row/column keys")
        if len(self.rows) and np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("table rows must sum to 1")


def _indicator_system(maps: OptimalMapSet, table: ConceptTable) -> np.ndarray:
    """A[(row, col), alpha] = 1 when alpha sends the row key to the column key."""
    col_of = {c: j for j, c in enumerate(table.cols)}
    n_r, n_c = len(table.rows), len(table.cols)
    a = np.zeros((n_r * n_c, len(maps.maps)))
    for i, key in enumerate(table.rows):
        for m, amap in enumerate(maps.maps):
            img = amap.image(table.kind, key) if table.level == "object" else amap.apply(maps.schema, key)
            j = col_of.get(img)
            if j is not None:
                a[i * n_c + j, m] = 1.0
    return a


def mixture_table(maps: OptimalMapSet, w, level: str = "object", kind: str | None = None,
                  rows=None) -> ConceptTable:
    """The table p_w(c | g) induced by mixing maps with weights ``w``."""
    schema = maps.schema
    if level == "object":
        kind = kind or schema.kinds[0]
        rows = list(rows) if rows is not None else list(maps.constrained[kind])
        cols = list(range(schema.object_domain(kind)))
    else:
        rows = list(rows) if rows is not None else list(maps.support)
        cols = sorted({m.apply(schema, g) for g in rows for m in maps.maps})
    tab = ConceptTable(level, rows, cols, np.full((len(rows), len(cols)), 1.0 / max(len(cols), 1)), kind)
    a = _indicator_system(maps, tab)
    tab.probs = (a @ np.asarray(w, float)).reshape(len(rows), len(cols))
    return tab


def decompose_table(table: ConceptTable, maps: OptimalMapSet, max_iter: int = 20_000,
                    tol: float = 1e-13) -> MixtureResult:
    """Simplex-constrained least squares for sum_{alpha: alpha(g)=c} w_alpha = p(c | g).

    Accelerated projected gradient (FISTA); the residual is the largest
    absolute equation error.
    """
    a = _indicator_system(maps, table)
    b = table.probs.ravel()
    k = a.shape[1]
    lip = max(np.linalg.norm(a, 2) ** 2, 1e-12)
    w = np.full(k, 1.0 / k)
    z, t = w.copy(), 1.0
    prev = np.inf
    for _ in range(max_iter):
        w_new = project_simplex(z - a.T @ (a @ z - b) / lip)
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        z = w_new + (t - 1) / t_new * (w_new - w)
        w, t = w_new, t_new
        f = float(np.sum((a @ w - b) ** 2))
        if f < tol**2 or abs(prev - f) <= tol * max(f, 1e-12):
            break
        prev = f
    res = mixture_summary(maps, w)
    res.residual = float(np.max(np.abs(a @ w - b))) if b.size else 0.0
    return res


def empirical_concept_table(model, x, g, level: str = "object", kind: str | None = None) -> ConceptTable:
    """Average predicted concept distributions grouped by ground truth.

    Object level pools every slot of ``kind``; vector level uses the full
    factorized joint and needs a schema small enough to enumerate.
    """
    schema = model.schema
    g = np.asarray(g)
    probs = model.concept_probs(x)
    if level == "object":
        kind = kind or schema.kinds[0]
        d = schema.object_domain(kind)
        vals = object_values(schema, g)
        sums, counts = np.zeros((d, d)), np.zeros(d)
        for j, obj in enumerate(schema.objects):
            if obj.kind != kind:
                continue
            joint = probs.object_joint(obj)
            np.add.at(sums, vals[:, j], joint)
            np.add.at(counts, vals[:, j], 1)
        rows = [v for v in range(d) if counts[v] > 0]
        missing = [v for v in range(d) if counts[v] == 0]
        tab = sums[rows] / counts[rows][:, None]
        return ConceptTable("object", rows, list(range(d)), tab / tab.sum(axis=1, keepdims=True),
                            kind, missing)
    if schema.n_assignments > 10**4:
        raise ValueError("vector-level tables need at most 10^4 concept assignments")
    cols = list(itertools.product(*(range(s) for s in schema.sizes)))
    joint = np.ones((g.shape[0], 1))
    for n in schema.names:
        joint = (joint[:, :, None] * probs[n][:, None, :]).reshape(g.shape[0], -1)
    keys = [tuple(int(v) for v in row) for row in g]
    rows = sorted(set(keys))
    pos = {k: i for i, k in enumerate(rows)}
    sums, counts = np.zeros((len(rows), len(cols))), np.zeros(len(rows))
    idx = np.array([pos[k] for k in keys])
    np.add.at(sums, idx, joint)
    np.add.at(counts, idx, 1)
    tab = sums / counts[:, None]
    return ConceptTable("vector", rows, cols, tab / tab.sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def rs_report(expr: KnowledgeExpr, support, prior=None, node_budget: int = DEFAULT_NODE_BUDGET) -> dict:
    """Everything written to ``rs.json``."""
    maps = enumerate_optimal_maps(expr, support, node_budget)
    total, n_rs = count_rs(maps)
    eq = equivalence_sets(maps)
    bounds = entropy_bounds(eq)
    mix = max_entropy_mixture(maps, prior)
    return {
        "total_optima": total,
        "rs_count": n_rs,
        "search_nodes": maps.nodes,
        "maps": [{k: list(v) for k, v in m.images} for m in maps.maps],
        "identity_index": maps.identity_index(),
        "free_values": maps.free,
        "equivalence_sets": {k: {str(v): e for v, e in s.items()} for k, s in eq.items()},
        "entropy_bounds": {k: {str(v): b for v, b in s.items()} for k, s in bounds.items()},
        "max_entropy_weights": mix.weights.tolist(),
        "max_entropy_objective": mix.entropy,
        "achieved_value_entropy": {k: {str(v): h for v, h in s.items()} for k, s in mix.per_value.items()},
        "achieved_support_entropy": [{"g": list(g), "entropy": h} for g, h in mix.per_support.items()],
    }
