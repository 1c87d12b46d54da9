"""Task specifications, synthetic data generation and the annotation oracle.

Inputs are low-dimensional Gaussian cluster embeddings: every object value
(e.g. a digit, or a shape/colour pair) owns one or more fixed unit-norm
centres per object kind, and an example is the concatenation of one noisy
centre per object slot.  Nearest-centre decoding therefore inverts the
generator, which is checked on every generated split.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .knowledge import ConceptSchema, ObjectSlot, Reasoner, Variable, compile_beta, parse_knowledge

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test", "ood")


class TaskError(ValueError):
    pass


class InvertibilityError(TaskError):
    """Generated inputs cannot be decoded back to their concepts."""


def derive_seed(seed: int, *names) -> int:
    """Split a global seed into an independent per-component seed.

    The rule is ``int(sha256("<seed>/<name>/...")[:8])``, so identical
    (seed, names) always give the same stream and different names never
    share one.
    """
    key = "/".join([str(int(seed))] + [str(n) for n in names])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


@dataclass
class TaskSpec:
    name: str
    schema: ConceptSchema
    knowledge: str
    support: list[tuple[int, ...]]
    prior: list[float] | None = None
    blocks: list[list[str]] | None = None
    renderer: dict = field(default_factory=lambda: {"dim": 16, "scale": 1.0, "sigma": 0.1, "seed": 0, "styles": 1})
    splits: dict = field(default_factory=lambda: {"train": 1000, "val": 250, "test": 250, "ood": 0})
    ood: list[tuple[int, ...]] | str = field(default_factory=list)  # explicit list or "complete"
    encoder: dict = field(default_factory=lambda: {"hidden": [64], "dropout": 0.5})
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        self.support = [tuple(int(v) for v in g) for g in self.support]
        if not isinstance(self.ood, str):
            self.ood = [tuple(int(v) for v in g) for g in self.ood]
        for g in self.support:
            self.schema.check_assignment(g)
        if self.prior is not None:
            if len(self.prior) != len(self.support) or min(self.prior) < 0:
                raise TaskError("prior must be a nonnegative weight per support element")
        if self.splits.get("ood", 0) and not ood_support(self):
            raise TaskError("an ood split needs a nonempty ood support")

    # -- derived objects ----------------------------------------------------

    def knowledge_expr(self):
        return parse_knowledge(self.knowledge, self.schema)

    def reasoner(self) -> Reasoner:
        return Reasoner(self.knowledge_expr(), self.blocks)

    def prior_weights(self) -> np.ndarray:
        w = np.ones(len(self.support)) if self.prior is None else np.asarray(self.prior, dtype=float)
        return w / w.sum()

    @property
    def dim(self) -> int:
        return int(self.renderer.get("dim", 16))

    @property
    def input_dim(self) -> int:
        return self.dim * len(self.schema.objects)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "schema": self.schema.to_dict(),
            "knowledge": self.knowledge,
            "blocks": self.blocks,
            "support": [list(g) for g in self.support],
            "prior": self.prior,
            "renderer": self.renderer,
            "splits": self.splits,
            "ood": self.ood if isinstance(self.ood, str) else [list(g) for g in self.ood],
            "encoder": self.encoder,
            "defaults": self.defaults,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise TaskError(f"unsupported task schema_version {d.get('schema_version')!r}")
        return cls(
            name=d["name"],
            schema=ConceptSchema.from_dict(d["schema"]),
            knowledge=d["knowledge"],
            support=d["support"],
            prior=d.get("prior"),
            blocks=d.get("blocks"),
            renderer=d.get("renderer", {}),
            splits=d.get("splits", {}),
            ood=d.get("ood", []),
            encoder=d.get("encoder", {"hidden": [64], "dropout": 0.5}),
            defaults=d.get("defaults", {}),
        )

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "TaskSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ood_support(spec: TaskSpec) -> list[tuple[int, ...]]:
    """Concept vectors of the out-of-distribution split, disjoint from the training support."""
    if spec.ood == "complete":
        train = set(spec.support)
        out = [g for g in itertools.product(*(range(s) for s in spec.schema.sizes)) if g not in train]
    else:
        out = list(spec.ood)
        overlap = set(out) & set(spec.support)
        if overlap:
            raise TaskError(f"ood support overlaps training support: {sorted(overlap)[:5]}")
    return out


# ---------------------------------------------------------------------------
# Builtin tasks
# ---------------------------------------------------------------------------


def _digit_schema(n: int) -> ConceptSchema:
    return ConceptSchema(
        (Variable("d1", n), Variable("d2", n)),
        (ObjectSlot("left", "digit", ("d1",)), ObjectSlot("right", "digit", ("d2",))),
        {"digit": ("digit",)},
    )


def mnist_half() -> TaskSpec:
    return TaskSpec(
        name="mnist_half",
        schema=_digit_schema(5),
        knowledge="y := d1 + d2;",
        blocks=[["d1"], ["d2"]],
        support=[(0, 0), (0, 1), (2, 3), (2, 4)],
        renderer={"dim": 16, "scale": 1.0, "sigma": 0.1, "seed": 11, "styles": 1},
        splits={"train": 2940, "val": 840, "test": 420, "ood": 1080},
        ood="complete",
        encoder={"hidden": [64], "dropout": 0.5},
        defaults={"lr": 5e-4, "decay": 0.95, "batch_size": 64, "epochs": 20,
                  "ensemble_size": 5, "gamma1": 0.8, "gamma2": 0.0},
    )


# Even/odd sum system: four sums over even digits and four over odd digits.
EVEN_ODD_SUPPORT = [(0, 6), (2, 8), (4, 6), (4, 8), (1, 5), (3, 7), (1, 9), (3, 9)]


def mnist_even_odd() -> TaskSpec:
    return TaskSpec(
        name="mnist_even_odd",
        schema=_digit_schema(10),
        knowledge="y := d1 + d2;",
        blocks=[["d1"], ["d2"]],
        support=EVEN_ODD_SUPPORT,
        renderer={"dim": 16, "scale": 1.0, "sigma": 0.1, "seed": 12, "styles": 1},
        splits={"train": 6720, "val": 1920, "test": 960, "ood": 5040},
        ood="complete",
        encoder={"hidden": [64], "dropout": 0.5},
        defaults={"lr": 5e-4, "decay": 0.95, "batch_size": 64, "epochs": 20,
                  "ensemble_size": 5, "gamma1": 0.8, "gamma2": 0.0},
    )


def traffic_mini() -> TaskSpec:
    # grn is seen by its own encoder; red and ped share the "cue" object so
    # that a pedestrian can be read as a red light.
    schema = ConceptSchema(
        (Variable("grn", 2), Variable("red", 2), Variable("ped", 2)),
        (ObjectSlot("light", "light", ("grn",)), ObjectSlot("cue", "cue", ("red", "ped"))),
        {"light": ("grn",), "cue": ("red", "ped")},
    )
    return TaskSpec(
        name="traffic_mini",
        schema=schema,
        knowledge="stop := red or ped;\ngo := grn and not red and not ped;",
        support=[(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)],
        renderer={"dim": 16, "scale": 1.0, "sigma": 0.1, "seed": 13, "styles": 1},
        splits={"train": 2000, "val": 500, "test": 500, "ood": 400},
        ood="complete",
        encoder={"hidden": [64], "dropout": 0.5},
        defaults={"lr": 1e-3, "decay": 0.95, "batch_size": 64, "epochs": 15,
                  "ensemble_size": 3, "gamma1": 2.0, "gamma2": 0.0},
    )


KANDINSKY_PATTERNS = ("same", "pair", "diff")


def _pattern_values(rng, pattern: str) -> list[int]:
    if pattern == "same":
        return [int(rng.integers(3))] * 3
    if pattern == "diff":
        return [int(v) for v in rng.permutation(3)]
    a, b = rng.choice(3, size=2, replace=False)
    vals = [int(a), int(a), int(b)]
    return [vals[i] for i in rng.permutation(3)]


def kandinsky_knowledge(n_figures: int = 3) -> str:
    def figs(pred, attr):
        return " and ".join(
            f"{pred}({', '.join(f'{attr}{f}{j}' for j in range(3))})" for f in range(n_figures)
        )

    terms = [f"({figs(p, a)})" for a in ("c", "s") for p in ("same", "pair", "all_diff")]
    return "shared := " + "\n   or ".join(terms) + ";"


def kandinsky_support(n: int, seed: int) -> list[tuple[int, ...]]:
    """Balanced positive/negative three-figure samples (figure-major, shape before colour)."""
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    want = {1: n // 2, 0: n - n // 2}
    while want[0] or want[1]:
        label = 1 if want[1] and (not want[0] or rng.random() < 0.5) else 0
        cp, sp = (KANDINSKY_PATTERNS[i] for i in rng.integers(3, size=2))
        if label:
            if rng.random() < 0.5:
                third = (cp, KANDINSKY_PATTERNS[rng.integers(3)])
            else:
                third = (KANDINSKY_PATTERNS[rng.integers(3)], sp)
        else:
            third = (rng.choice([p for p in KANDINSKY_PATTERNS if p != cp]),
                     rng.choice([p for p in KANDINSKY_PATTERNS if p != sp]))
        g = []
        for c_pat, s_pat in ((cp, sp), (cp, sp), third):
            colors = _pattern_values(rng, c_pat)
            shapes = _pattern_values(rng, s_pat)
            for s, c in zip(shapes, colors):
                g += [s, c]
        g = tuple(g)
        if g in seen:
            continue
        seen.add(g)
        want[label] -= 1
        out.append(g)
    return out


def kandinsky_mini(n_support: int = 3000, seed: int = 7) -> TaskSpec:
    variables, objects, blocks = [], [], []
    for f in range(3):
        block = []
        for j in range(3):
            variables += [Variable(f"s{f}{j}", 3), Variable(f"c{f}{j}", 3)]
            objects.append(ObjectSlot(f"o{f}{j}", "obj", (f"s{f}{j}", f"c{f}{j}")))
            block += [f"s{f}{j}", f"c{f}{j}"]
        blocks.append(block)
    schema = ConceptSchema(tuple(variables), tuple(objects), {"obj": ("shape", "color")})
    return TaskSpec(
        name="kandinsky_mini",
        schema=schema,
        knowledge=kandinsky_knowledge(),
        blocks=blocks,
        support=kandinsky_support(n_support, seed),
        renderer={"dim": 16, "scale": 1.0, "sigma": 0.05, "seed": 14, "styles": 1, "compositional": True},
        splits={"train": 4000, "val": 1000, "test": 1000, "ood": 0},
        ood=[],
        encoder={"hidden": [64], "dropout": 0.0},
        defaults={"lr": 3e-3, "decay": 0.95, "batch_size": 16, "epochs": 10,
                  "ensemble_size": 5, "gamma1": 0.01, "gamma2": 0.0, "entropy_aid": 0.2},
    )


BUILTINS = {
    "mnist_half": mnist_half,
    "mnist_even_odd": mnist_even_odd,
    "kandinsky_mini": kandinsky_mini,
    "traffic_mini": traffic_mini,
}

# Colour/shape names for kandinsky_mini values.
SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "blue", "yellow")


def builtin_task(name: str) -> TaskSpec:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise TaskError(f"unknown task {name!r}; builtins are {sorted(BUILTINS)}") from None


def load_task(name_or_path: str) -> TaskSpec:
    if name_or_path in BUILTINS:
        return builtin_task(name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"task file {name_or_path!r} not found")
    return TaskSpec.load(path)


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


@dataclass
class Split:
    name: str
    x: np.ndarray          # (n, n_objects * dim)
    g: np.ndarray          # (n, n_variables) ground-truth concepts
    y: list                # labels, beta(g)

    def __len__(self):
        return len(self.y)


@dataclass
class GeneratedDataset:
    spec: TaskSpec
    seed: int
    splits: dict[str, Split]
    centers: dict[str, np.ndarray]  # kind -> (object domain, styles, dim)

    def __getitem__(self, name: str) -> Split:
        return self.splits[name]


def render_centers(spec: TaskSpec) -> dict[str, np.ndarray]:
    """Cluster centres per kind, shape (object domain, styles, dim), unit norm times ``scale``.

    With ``compositional`` set, a centre is the normalised sum of one random
    vector per attribute value (drawn per style), so objects sharing an
    attribute value share a direction.  Otherwise every object value gets an
    unrelated random centre.
    """
    r = spec.renderer
    rng = np.random.default_rng(int(r.get("seed", 0)))
    styles = int(r.get("styles", 1))
    schema = spec.schema
    out = {}
    for kind in schema.kinds:
        d = schema.object_domain(kind)
        if r.get("compositional", False):
            parts = [rng.normal(size=(size, styles, spec.dim)) for size in schema.layout(kind)]
            c = np.zeros((d, styles, spec.dim))
            for v in range(d):
                for part, u in zip(parts, schema.decode_object(kind, v)):
                    c[v] += part[u]
        else:
            c = rng.normal(size=(d, styles, spec.dim))
        c /= np.linalg.norm(c, axis=2, keepdims=True)
        out[kind] = c * float(r.get("scale", 1.0))
    return out


def _allocate(n: int, weights: np.ndarray, rng) -> np.ndarray:
    """Integer counts summing to ``n``, proportional to ``weights`` (largest remainder, random ties)."""
    exact = n * weights
    counts = np.floor(exact).astype(int)
    rest = n - counts.sum()
    if rest:
        rem = exact - counts
        idx = rng.choice(len(weights), size=rest, replace=False, p=rem / rem.sum())
        counts[idx] += 1
    return counts


def object_values(schema: ConceptSchema, g: np.ndarray) -> np.ndarray:
    """(n, n_objects) matrix of object value indices for concept rows ``g``."""
    g = np.atleast_2d(g)
    cols = []
    for obj in schema.objects:
        idx = np.zeros(g.shape[0], dtype=int)
        for name in obj.variables:
            idx = idx * schema.size(name) + g[:, schema.index(name)]
        cols.append(idx)
    return np.stack(cols, axis=1)


def decode_inputs(spec: TaskSpec, x: np.ndarray, centers: dict) -> np.ndarray:
    """Nearest-centre decoding of inputs back to concept vectors."""
    schema, dim = spec.schema, spec.dim
    g = np.zeros((x.shape[0], len(schema.variables)), dtype=int)
    for j, obj in enumerate(schema.objects):
        block = x[:, j * dim:(j + 1) * dim]
        c = centers[obj.kind]
        flat = c.reshape(-1, dim)
        d = ((block[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
        val = np.argmin(d, axis=1) // c.shape[1]
        for k, name in enumerate(obj.variables):
            g[:, schema.index(name)] = [schema.decode_object(obj.kind, int(v))[k] for v in val]
    return g


def render(spec: TaskSpec, g: np.ndarray, centers: dict, rng) -> np.ndarray:
    schema, dim = spec.schema, spec.dim
    sigma = float(spec.renderer.get("sigma", 0.1))
    vals = object_values(schema, g)
    n = g.shape[0]
    x = np.empty((n, dim * len(schema.objects)))
    for j, obj in enumerate(schema.objects):
        c = centers[obj.kind]
        style = rng.integers(c.shape[1], size=n)
        x[:, j * dim:(j + 1) * dim] = c[vals[:, j], style] + sigma * rng.normal(size=(n, dim))
    return x


def generate_dataset(spec: TaskSpec, seed: int) -> GeneratedDataset:
    """Sample every split; fails with :class:`InvertibilityError` if decoding is not exact."""
    centers = render_centers(spec)
    beta = compile_beta(spec.knowledge_expr())
    pools = {"ood": ood_support(spec)} if spec.splits.get("ood", 0) else {}
    splits = {}
    for name in SPLITS:
        n = int(spec.splits.get(name, 0))
        if name == "ood":
            if not n:
                continue
            support = pools["ood"]
            weights = np.full(len(support), 1.0 / len(support))
        else:
            support, weights = spec.support, spec.prior_weights()
        rng = np.random.default_rng(derive_seed(seed, "data", name))
        counts = _allocate(n, weights, rng)
        g = np.array([s for s, k in zip(support, counts) for _ in range(k)], dtype=int).reshape(
            n, len(spec.schema.variables))
        g = g[rng.permutation(n)]
        x = render(spec, g, centers, rng)
        if n and not np.array_equal(decode_inputs(spec, x, centers), g):
            raise InvertibilityError(
                f"nearest-centre decoding failed on split {name!r}; lower renderer sigma")
        y = [beta(tuple(int(v) for v in row)) for row in g]
        splits[name] = Split(name, x, g, y)
    return GeneratedDataset(spec, seed, splits, centers)


def export_csv(ds: GeneratedDataset, path) -> None:
    """Columns: split, x0..x{D-1}, one per concept variable, one per label."""
    spec = ds.spec
    names = spec.schema.names
    labels = spec.knowledge_expr().label_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split"] + [f"x{i}" for i in range(spec.input_dim)] + list(names) + list(labels))
        for split in ds.splits.values():
            for x, g, y in zip(split.x, split.g, split.y):
                ys = list(y) if isinstance(y, tuple) else [y]
                w.writerow([split.name] + [repr(float(v)) for v in x] + [int(v) for v in g] + ys)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


class Oracle:
    """Reveals hidden ground-truth concepts and keeps an append-only log."""

    def __init__(self, schema: ConceptSchema, g: np.ndarray):
        self.schema = schema
        self._g = np.asarray(g)
        self.log: list[tuple[int, str]] = []
        self._revealed: set[tuple[int, str]] = set()

    def reveal(self, index: int, variable: str) -> int:
        if variable not in self.schema.names:
            raise TaskError(f"unknown variable {variable!r}")
        if not 0 <= index < len(self._g):
            raise IndexError(f"example index {index} out of range")
        key = (int(index), variable)
        if key not in self._revealed:
            self._revealed.add(key)
            self.log.append(key)
        return int(self._g[index, self.schema.index(variable)])

    @property
    def spent(self) -> int:
        return len(self._revealed)


def oracle_reveal(oracle: Oracle, index: int, variable: str) -> int:
    return oracle.reveal(index, variable)
