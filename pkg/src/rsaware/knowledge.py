"""Knowledge DSL, the deterministic label map and exact probabilistic reasoning.

A knowledge program is a list of label definitions::

    stop := red or ped;
    go   := grn and not red and not ped;

Integer labels take the value of their defining expression, boolean labels
its truth value (0/1).  When a program defines several labels the label is
the tuple of their values, in definition order.

Probabilistic reasoning is exact.  Variables may be partitioned into
*blocks*; every maximal sub-expression that only reads variables of a
single block is tabulated once per block assignment (its "signature"), and
the label is then evaluated over the product of block signatures.  With a
single block this is plain full enumeration.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_ENUMERATION = 10**6


class KnowledgeError(ValueError):
    """Invalid knowledge program or schema."""


class KnowledgeSyntaxError(KnowledgeError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EnumerationTooLarge(KnowledgeError):
    """Raised when an enumeration would exceed ``MAX_ENUMERATION`` items."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variable:
    name: str
    size: int


@dataclass(frozen=True)
class ObjectSlot:
    """One perceptual object.  Objects of the same ``kind`` share an encoder."""

    name: str
    kind: str
    variables: tuple[str, ...]


@dataclass(frozen=True)
class ConceptSchema:
    variables: tuple[Variable, ...]
    objects: tuple[ObjectSlot, ...] = ()
    # attribute names per object kind, e.g. {"obj": ("shape", "color")}
    attributes: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise KnowledgeError("variable names must be unique")
        for v in self.variables:
            if v.size < 2:
                raise KnowledgeError(f"variable {v.name!r} has domain size {v.size} < 2")
        if not self.objects:
            objs = tuple(ObjectSlot(v.name, v.name, (v.name,)) for v in self.variables)
            object.__setattr__(self, "objects", objs)
        seen = [n for o in self.objects for n in o.variables]
        if sorted(seen) != sorted(names):
            raise KnowledgeError("every variable must belong to exactly one object")
        layouts: dict[str, tuple[int, ...]] = {}
        for o in self.objects:
            lay = tuple(self.size(n) for n in o.variables)
            if layouts.setdefault(o.kind, lay) != lay:
                raise KnowledgeError(f"objects of kind {o.kind!r} have different layouts")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(v.size for v in self.variables)

    def index(self, name: str) -> int:
        for i, v in enumerate(self.variables):
            if v.name == name:
                return i
        raise KnowledgeError(f"unknown variable {name!r}")

    def size(self, name: str) -> int:
        return self.variables[self.index(name)].size

    def n_assignments(self) -> int:
        return math.prod(self.sizes)

    @property
    def kinds(self) -> tuple[str, ...]:
        out: list[str] = []
        for o in self.objects:
            if o.kind not in out:
                out.append(o.kind)
        return tuple(out)

    def objects_of(self, kind: str) -> tuple[ObjectSlot, ...]:
        return tuple(o for o in self.objects if o.kind == kind)

    def layout(self, kind: str) -> tuple[int, ...]:
        obj = self.objects_of(kind)[0]
        return tuple(self.size(n) for n in obj.variables)

    def object_domain(self, kind: str) -> int:
        return math.prod(self.layout(kind))

    def attribute_names(self, kind: str) -> tuple[str, ...]:
        names = self.attributes.get(kind)
        if names:
            return tuple(names)
        return tuple(self.objects_of(kind)[0].variables)

    def encode_object(self, kind: str, values: Sequence[int]) -> int:
        """Mixed-radix index of an object's attribute values (first is most significant)."""
        if len(values) != len(self.layout(kind)):
            raise ValueError(f"kind {kind!r} has {len(self.layout(kind))} attributes, got {tuple(values)}")
        idx = 0
        for v, s in zip(values, self.layout(kind)):
            idx = idx * s + int(v)
        return idx

    def decode_object(self, kind: str, index: int) -> tuple[int, ...]:
        out = []
        for s in reversed(self.layout(kind)):
            out.append(index % s)
            index //= s
        return tuple(reversed(out))

    def check_assignment(self, c: Sequence[int]) -> None:
        if len(c) != len(self.variables):
            raise KnowledgeError(f"assignment has {len(c)} values, schema has {len(self.variables)}")
        for v, x in zip(self.variables, c):
            if not 0 <= int(x) < v.size:
                raise KnowledgeError(f"value {x} out of domain for {v.name!r} (size {v.size})")

    def to_dict(self) -> dict:
        return {
            "variables": [{"name": v.name, "size": v.size} for v in self.variables],
            "objects": [
                {"name": o.name, "kind": o.kind, "variables": list(o.variables)} for o in self.objects
            ],
            "attributes": {k: list(v) for k, v in self.attributes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptSchema":
        return cls(
            variables=tuple(Variable(v["name"], int(v["size"])) for v in d["variables"]),
            objects=tuple(
                ObjectSlot(o["name"], o["kind"], tuple(o["variables"])) for o in d.get("objects", [])
            ),
            attributes={k: tuple(v) for k, v in d.get("attributes", {}).items()},
        )


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Int:
    value: int


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # + == != and or implies
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    operand: object


@dataclass(frozen=True)
class Pred:
    name: str  # same | all_diff | pair
    args: tuple[str, ...]


@dataclass(frozen=True)
class LabelDef:
    name: str
    expr: object


@dataclass(frozen=True)
class KnowledgeExpr:
    """A parsed program bound to a schema."""

    labels: tuple[LabelDef, ...]
    schema: ConceptSchema = field(compare=False)

    @property
    def label_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.labels)


PREDICATES = ("same", "all_diff", "pair")

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)|(?P<int>\d+)|"
    r"(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>:=|==|!=|[+(),;])"
)
_KEYWORDS = {"and", "or", "not", "implies"}


def _tokenize(src: str):
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise KnowledgeSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        elif kind not in ("ws", "comment"):
            if kind == "ident" and text in _KEYWORDS:
                kind = "kw"
            tokens.append((kind, text, line, col))
        if kind != "nl":
            col += len(text)
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        where = "end of input" if tok[0] == "eof" else repr(tok[1])
        raise KnowledgeSyntaxError(f"{msg}, got {where}", tok[2], tok[3])

    def expect(self, text):
        tok = self.peek()
        if tok[1] != text or tok[0] == "eof":
            self.error(f"expected {text!r}")
        return self.next()

    def accept(self, text):
        tok = self.peek()
        if tok[0] != "eof" and tok[1] == text:
            self.i += 1
            return True
        return False

    def program(self):
        defs = []
        while self.peek()[0] != "eof":
            tok = self.next()
            if tok[0] != "ident":
                self.error("expected label name", tok)
            self.expect(":=")
            expr = self.expr()
            if self.peek()[0] != "eof":  # the last definition may omit its ';'
                self.expect(";")
            defs.append((LabelDef(tok[1], expr), tok))
        if not defs:
            self.error("expected at least one label definition")
        return defs

    # precedence: implies < or < and < not < comparison < +
    def expr(self):
        left = self.disj()
        if self.accept("implies"):
            return BinOp("implies", left, self.expr())
        return left

    def disj(self):
        node = self.conj()
        while self.accept("or"):
            node = BinOp("or", node, self.conj())
        return node

    def conj(self):
        node = self.neg()
        while self.accept("and"):
            node = BinOp("and", node, self.neg())
        return node

    def neg(self):
        if self.accept("not"):
            return Not(self.neg())
        return self.comparison()

    def comparison(self):
        node = self.arith()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("==", "!="):
            self.next()
            node = BinOp(tok[1], node, self.arith())
        return node

    def arith(self):
        node = self.term()
        while self.accept("+"):
            node = BinOp("+", node, self.term())
        return node

    def term(self):
        tok = self.peek()
        if tok[0] == "int":
            self.next()
            return Int(int(tok[1]))
        if tok[0] == "ident":
            self.next()
            if tok[1] in PREDICATES and self.peek()[1] == "(":
                self.next()
                args = [self.ident()]
                while self.accept(","):
                    args.append(self.ident())
                self.expect(")")
                return Pred(tok[1], tuple(args))
            return Ref(tok[1])
        if tok[1] == "(" and tok[0] == "op":
            self.next()
            node = self.expr()
            self.expect(")")
            return node
        self.error("expected integer, variable, predicate or '('")

    def ident(self):
        tok = self.next()
        if tok[0] != "ident":
            self.error("expected variable name", tok)
        return tok[1]


def variables_of(node) -> set[str]:
    if isinstance(node, Ref):
        return {node.name}
    if isinstance(node, Pred):
        return set(node.args)
    if isinstance(node, BinOp):
        return variables_of(node.left) | variables_of(node.right)
    if isinstance(node, Not):
        return variables_of(node.operand)
    return set()


def parse_knowledge(source: str, schema: ConceptSchema) -> KnowledgeExpr:
    """Parse DSL text into a :class:`KnowledgeExpr` bound to ``schema``.

    Every operator of the language is total, so a program that parses and
    only references schema variables defines a total label map.
    """
    parser = _Parser(source)
    defs = parser.program()
    known = set(schema.names)
    seen = set()
    for d, tok in defs:
        if d.name in seen:
            raise KnowledgeSyntaxError(f"label {d.name!r} defined twice", tok[2], tok[3])
        seen.add(d.name)
        missing = variables_of(d.expr) - known
        if missing:
            raise KnowledgeError(f"label {d.name!r} references unknown variable(s) {sorted(missing)}")
        if isinstance(d.expr, Pred) and len(d.expr.args) < 2:
            raise KnowledgeError(f"predicate {d.expr.name} needs at least two arguments")
    return KnowledgeExpr(tuple(d for d, _ in defs), schema)


def pretty(node) -> str:
    """Fully parenthesised source text; parses back to the same AST."""
    if isinstance(node, KnowledgeExpr):
        return "\n".join(f"{d.name} := {pretty(d.expr)};" for d in node.labels)
    if isinstance(node, Int):
        return str(node.value)
    if isinstance(node, Ref):
        return node.name
    if isinstance(node, Pred):
        return f"{node.name}({', '.join(node.args)})"
    if isinstance(node, Not):
        return f"(not {pretty(node.operand)})"
    if isinstance(node, BinOp):
        return f"({pretty(node.left)} {node.op} {pretty(node.right)})"
    raise TypeError(node)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _pred_value(name: str, vals: Sequence[int]) -> int:
    distinct = len(set(vals))
    if name == "same":
        return int(distinct == 1)
    if name == "all_diff":
        return int(distinct == len(vals))
    return int(distinct != 1 and distinct != len(vals))  # pair


def _compile(node, pos: dict[str, int], subst: dict[int, int] | None = None) -> Callable:
    """Compile ``node`` to a function of a value tuple indexed by ``pos``.

    ``subst`` maps ``id(subnode)`` to an index in a second tuple holding
    precomputed values of those sub-expressions.
    """
    if subst and id(node) in subst:
        k = subst[id(node)]
        return lambda c, s: s[k]
    if isinstance(node, Int):
        v = node.value
        return lambda c, s: v
    if isinstance(node, Ref):
        i = pos[node.name]
        return lambda c, s: c[i]
    if isinstance(node, Pred):
        idx = [pos[a] for a in node.args]
        name = node.name
        return lambda c, s: _pred_value(name, [c[i] for i in idx])
    if isinstance(node, Not):
        f = _compile(node.operand, pos, subst)
        return lambda c, s: int(not f(c, s))
    if isinstance(node, BinOp):
        f = _compile(node.left, pos, subst)
        g = _compile(node.right, pos, subst)
        op = node.op
        if op == "+":
            return lambda c, s: f(c, s) + g(c, s)
        if op == "==":
            return lambda c, s: int(f(c, s) == g(c, s))
        if op == "!=":
            return lambda c, s: int(f(c, s) != g(c, s))
        if op == "and":
            return lambda c, s: int(bool(f(c, s)) and bool(g(c, s)))
        if op == "or":
            return lambda c, s: int(bool(f(c, s)) or bool(g(c, s)))
        if op == "implies":
            return lambda c, s: int((not f(c, s)) or bool(g(c, s)))
    raise TypeError(node)


def compile_beta(expr: KnowledgeExpr) -> Callable[[Sequence[int]], object]:
    """Return a fast, unchecked version of :func:`eval_beta` over value tuples in schema order."""
    pos = {n: i for i, n in enumerate(expr.schema.names)}
    fs = [_compile(d.expr, pos) for d in expr.labels]
    if len(fs) == 1:
        f = fs[0]
        return lambda c: f(c, None)
    return lambda c: tuple(f(c, None) for f in fs)


def eval_beta(expr: KnowledgeExpr, c) -> object:
    """Evaluate the label map on a full concept assignment.

    ``c`` is a sequence in schema order or a mapping from variable name to value.
    """
    if isinstance(c, dict):
        c = [c[n] for n in expr.schema.names]
    expr.schema.check_assignment(c)
    return compile_beta(expr)(tuple(int(x) for x in c))


def all_assignments(schema: ConceptSchema, limit: int = MAX_ENUMERATION):
    n = schema.n_assignments()
    if n > limit:
        raise EnumerationTooLarge(f"{n} assignments exceed the enumeration limit {limit}")
    return itertools.product(*(range(s) for s in schema.sizes))


def admissible_set(expr: KnowledgeExpr, y, schema: ConceptSchema | None = None) -> list[tuple[int, ...]]:
    """All assignments ``c`` with ``beta(c) == y`` in lexicographic order."""
    schema = schema or expr.schema
    beta = compile_beta(expr)
    y = tuple(y) if isinstance(y, (list, tuple)) else y
    return [c for c in all_assignments(schema) if beta(c) == y]


# ---------------------------------------------------------------------------
# Label space and structured reasoning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    values: tuple  # ints for a single label, tuples otherwise

    def __len__(self):
        return len(self.values)

    @property
    def is_vector(self) -> bool:
        return len(self.names) > 1

    def index(self, y) -> int:
        if isinstance(y, (list, np.ndarray)):
            y = tuple(int(v) for v in y)
        try:
            return self._lookup[y]
        except KeyError:
            raise KnowledgeError(f"label {y!r} outside the label space") from None

    @property
    def _lookup(self):
        d = self.__dict__.get("_lookup_cache")
        if d is None:
            d = {v: i for i, v in enumerate(self.values)}
            object.__setattr__(self, "_lookup_cache", d)
        return d


def _maximal_local(node, block_of: dict[str, int], out: list):
    """Collect maximal sub-expressions whose variables all live in one block."""
    vs = variables_of(node)
    blocks = {block_of[v] for v in vs}
    if len(blocks) == 1:
        out.append((next(iter(blocks)), node))
        return
    if isinstance(node, BinOp):
        _maximal_local(node.left, block_of, out)
        _maximal_local(node.right, block_of, out)
    elif isinstance(node, Not):
        _maximal_local(node.operand, block_of, out)
    # constants need no tabulation


class NumpyOps:
    """Array primitives used by :meth:`Reasoner.label_probs` on plain arrays."""

    @staticmethod
    def outer(a, b):
        n = a.shape[0]
        return (a[:, :, None] * b[:, None, :]).reshape(n, -1)

    @staticmethod
    def matmul_const(a, m):
        return a @ m


NUMPY = NumpyOps()


class Reasoner:
    """Exact label distributions for factorized concept distributions.

    ``blocks`` is a partition of the schema variables.  ``None`` means one
    block holding everything, i.e. full enumeration.
    """

    def __init__(self, expr: KnowledgeExpr, blocks: Sequence[Sequence[str]] | None = None,
                 limit: int = MAX_ENUMERATION):
        schema = expr.schema
        self.expr = expr
        self.schema = schema
        if blocks is None:
            blocks = [list(schema.names)]
        blocks = [tuple(b) for b in blocks]
        flat = [v for b in blocks for v in b]
        if sorted(flat) != sorted(schema.names):
            raise KnowledgeError("blocks must partition the schema variables")
        self.blocks = blocks
        block_of = {v: k for k, b in enumerate(blocks) for v in b}

        local: list = []
        for d in expr.labels:
            _maximal_local(d.expr, block_of, local)
        # signature slots, per block
        slots: list[list] = [[] for _ in blocks]
        for k, node in local:
            slots[k].append(node)

        self.block_indicators: list[np.ndarray] = []
        self.block_signatures: list[list[tuple]] = []
        subst: dict[int, int] = {}
        offset = 0
        for k, b in enumerate(blocks):
            sizes = [schema.size(v) for v in b]
            n = math.prod(sizes)
            if n > limit:
                raise EnumerationTooLarge(f"block {k} has {n} assignments (limit {limit})")
            pos = {v: i for i, v in enumerate(b)}
            fs = [_compile(node, pos) for node in slots[k]]
            sig_index: dict[tuple, int] = {}
            rows = np.empty(n, dtype=np.int64)
            for a, c in enumerate(itertools.product(*(range(s) for s in sizes))):
                sig = tuple(f(c, None) for f in fs)
                rows[a] = sig_index.setdefault(sig, len(sig_index))
            ind = np.zeros((n, len(sig_index)))
            ind[np.arange(n), rows] = 1.0
            self.block_indicators.append(ind)
            sigs = sorted(sig_index, key=sig_index.get)
            self.block_signatures.append(sigs)
            for j, node in enumerate(slots[k]):
                subst[id(node)] = offset + j
            offset += len(slots[k])

        n_comb = math.prod(len(s) for s in self.block_signatures)
        if n_comb > limit:
            raise EnumerationTooLarge(f"{n_comb} signature combinations exceed the limit {limit}")
        fs = [_compile(d.expr, {}, subst) for d in expr.labels]
        values = []
        for combo in itertools.product(*self.block_signatures):
            s = tuple(x for sig in combo for x in sig)
            vals = tuple(f(None, s) for f in fs)
            values.append(vals[0] if len(vals) == 1 else vals)

        if len(fs) == 1:
            lo, hi = min(values), max(values)
            space = tuple(range(lo, hi + 1))
        else:
            ranges = [range(min(v[i] for v in values), max(v[i] for v in values) + 1)
                      for i in range(len(fs))]
            space = tuple(itertools.product(*ranges))
        self.label_space = LabelSpace(expr.label_names, space)
        cols = np.array([self.label_space.index(v) for v in values])
        self.label_indicator = np.zeros((n_comb, len(space)))
        self.label_indicator[np.arange(n_comb), cols] = 1.0
        self.reachable = np.zeros(len(space), dtype=bool)
        self.reachable[cols] = True

    def label_probs(self, factors: dict, ops=NUMPY):
        """Map per-variable probability matrices (batch x size) to label probabilities.

        ``ops`` supplies ``outer`` and ``matmul_const``; pass an autodiff tape
        to differentiate through the reasoning layer.
        """
        sig = None
        for b, ind in zip(self.blocks, self.block_indicators):
            joint = factors[b[0]]
            for v in b[1:]:
                joint = ops.outer(joint, factors[v])
            s = ops.matmul_const(joint, ind)
            sig = s if sig is None else ops.outer(sig, s)
        return ops.matmul_const(sig, self.label_indicator)


@dataclass
class ConceptDistribution:
    """Factorized categorical distribution: one (batch x size) matrix per variable."""

    schema: ConceptSchema
    probs: dict

    def __getitem__(self, name: str) -> np.ndarray:
        return self.probs[name]

    @property
    def batch_size(self) -> int:
        return next(iter(self.probs.values())).shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        for v in self.schema.variables:
            p = np.asarray(self.probs[v.name])
            if p.ndim != 2 or p.shape[1] != v.size:
                raise KnowledgeError(f"factor {v.name!r} has shape {p.shape}, expected (n, {v.size})")
            if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
                raise KnowledgeError(f"factor {v.name!r} is not a probability vector")

    def argmax(self) -> dict:
        return {n: np.argmax(p, axis=1) for n, p in self.probs.items()}

    def object_joint(self, obj: ObjectSlot) -> np.ndarray:
        """Joint over one object's attributes (batch x object domain)."""
        joint = self.probs[obj.variables[0]]
        for n in obj.variables[1:]:
            joint = NUMPY.outer(joint, self.probs[n])
        return joint

    @classmethod
    def point_mass(cls, schema: ConceptSchema, assignments) -> "ConceptDistribution":
        a = np.atleast_2d(np.asarray(assignments, dtype=int))
        probs = {}
        for j, v in enumerate(schema.variables):
            m = np.zeros((a.shape[0], v.size))
            m[np.arange(a.shape[0]), a[:, j]] = 1.0
            probs[v.name] = m
        return cls(schema, probs)

    @classmethod
    def uniform(cls, schema: ConceptSchema, n: int = 1) -> "ConceptDistribution":
        return cls(schema, {v.name: np.full((n, v.size), 1.0 / v.size) for v in schema.variables})


def label_distribution(reasoner: Reasoner, p: ConceptDistribution) -> np.ndarray:
    """Exact p(y | x) for every row of ``p``; columns follow ``reasoner.label_space``."""
    p.validate()
    return reasoner.label_probs(p.probs)


def map_predict(reasoner: Reasoner, p: ConceptDistribution) -> list:
    """MAP label per row; ties go to the lowest label index."""
    idx = np.argmax(label_distribution(reasoner, p), axis=1)
    return [reasoner.label_space.values[i] for i in idx]


def naive_label_distribution(expr: KnowledgeExpr, p: ConceptDistribution, space: LabelSpace) -> np.ndarray:
    """Brute-force reference: sum the product of factors over every assignment."""
    schema = expr.schema
    beta = compile_beta(expr)
    out = np.zeros((p.batch_size, len(space)))
    mats = [np.asarray(p.probs[n]) for n in schema.names]
    for c in all_assignments(schema):
        w = np.ones(p.batch_size)
        for m, x in zip(mats, c):
            w = w * m[:, x]
        out[:, space.index(beta(c))] += w
    return out


PATTERNS = ("same", "pair", "diff")


def figure_pattern_distribution(shapes: Sequence[np.ndarray], colors: Sequence[np.ndarray]) -> dict:
    """Probabilities of the same/pair/diff flags for one three-object figure.

    ``shapes`` and ``colors`` hold one categorical vector per object.  The
    9^3 joint object assignments are enumerated explicitly.
    """
    if len(shapes) != 3 or len(colors) != 3:
        raise KnowledgeError(f"a figure has exactly 3 objects, got {len(shapes)}")
    shapes = [np.asarray(s, dtype=float) for s in shapes]
    colors = [np.asarray(c, dtype=float) for c in colors]
    out = {"color": np.zeros(3), "shape": np.zeros(3)}
    objects = [list(itertools.product(range(len(s)), range(len(c)))) for s, c in zip(shapes, colors)]
    for combo in itertools.product(*objects):
        w = 1.0
        for (s, c), ps, pc in zip(combo, shapes, colors):
            w *= ps[s] * pc[c]
        for attr, vals in (("shape", [o[0] for o in combo]), ("color", [o[1] for o in combo])):
            d = len(set(vals))
            out[attr][0 if d == 1 else (2 if d == 3 else 1)] += w
    return out


def iter_support_values(expr: KnowledgeExpr, support: Iterable[Sequence[int]]):
    beta = compile_beta(expr)
    for g in support:
        yield tuple(g), beta(tuple(g))
