"""Per-view centrality features of the center actor."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np

from . import centrality as C
from .actorgraph import EGO_KINDS, ActorGraph, GraphKind

log = logging.getLogger(__name__)

CLASSES = ("gambling", "random", "ransom")

FEATURES = (
    "# of vertices",
    "# of edges",
    "sum of weights",
    "Loops",
    "Degree(in)",
    "Degree(out)",
    "Degree(all)",
    "Neighborhood(1)",
    "Neighborhood(2)",
    "Closeness(wtd/in)",
    "Closeness(wtd/out)",
    "Closeness(wtd/all)",
    "Closeness(uwtd/in)",
    "Closeness(uwtd/out)",
    "Closeness(uwtd/all)",
    "Betweenness",
    "PageRank",
    "cluster coefficient",
    "Coreness(IN)",
    "Coreness(OUT)",
    "Coreness(all)",
    "Coreness(IN)/n",
    "Coreness(OUT)/n",
    "Coreness(all)/n",
    "Hub",
    "Authority",
)

# fixed ego1-simple feature list, in random-forest importance order
EGO1_SIMPLE_SCHEMA = (
    "Closeness(wtd/out)",
    "sum of weights",
    "Closeness(uwtd/out)",
    "# of vertices",
    "Closeness(wtd/in)",
    "cluster coefficient",
    "Closeness(wtd/all)",
    "Closeness(uwtd/in)",
    "Coreness(all)",
    "Authority",
    "Coreness(IN)",
)

FEATURE_COUNTS = {
    GraphKind.EGO3: 11,
    GraphKind.EGO3_SIMPLE: 16,
    GraphKind.EGO2: 13,
    GraphKind.EGO2_SIMPLE: 16,
    GraphKind.EGO1: 12,
    GraphKind.EGO1_SIMPLE: 11,
}

SCHEMA_VERSION = 1
PRUNE_THRESHOLD = 0.95


@dataclass
class FeatureVector:
    values: dict[str, float]
    graph_kind: GraphKind
    actor: int
    label: str | None = None
    group: str | None = None

    def __post_init__(self):
        bad = [k for k, v in self.values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite features: {bad}")

    def select(self, schema: Sequence[str]) -> "FeatureVector":
        return replace(self, values={k: self.values[k] for k in schema})


@dataclass
class FeatureMatrix:
    kind: GraphKind
    schema: tuple[str, ...]
    rows: list[FeatureVector] = field(default_factory=list)
    flagged: tuple[str, ...] = ()

    def __post_init__(self):
        self.schema = tuple(self.schema)
        for r in self.rows:
            if tuple(r.values) != self.schema:
                raise ValueError("row does not match matrix schema")
            if r.graph_kind != self.kind:
                raise ValueError(f"row of kind {r.graph_kind} in {self.kind} matrix")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def X(self) -> np.ndarray:
        return np.array([[r.values[k] for k in self.schema] for r in self.rows], dtype=np.float64).reshape(
            len(self.rows), len(self.schema)
        )

    @property
    def labels(self) -> list[str | None]:
        return [r.label for r in self.rows]

    @property
    def groups(self) -> list[str | None]:
        return [r.group for r in self.rows]

    def select(self, schema: Sequence[str]) -> "FeatureMatrix":
        return FeatureMatrix(self.kind, tuple(schema), [r.select(schema) for r in self.rows])

    def subset(self, groups: Iterable[str]) -> "FeatureMatrix":
        keep = set(groups)
        return FeatureMatrix(self.kind, self.schema, [r for r in self.rows if r.group in keep])


def compute_features(g: ActorGraph, kind: GraphKind) -> FeatureVector:
    """The full feature superset for the center of one graph view."""
    if not g.vertices:
        raise ValueError("empty graph")
    verts = sorted(g.vertices)
    pos = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    el = C.EdgeList(
        n,
        np.array([pos[e.src] for e in g.edges], dtype=np.int64),
        np.array([pos[e.dst] for e in g.edges], dtype=np.int64),
        np.array([e.weight for e in g.edges], dtype=np.float64),
    )
    c = pos[g.center]
    hub, auth = C.hits(el)
    core = {m: float(C.coreness(el, m)[c]) for m in ("in", "out", "all")}
    indeg = int((el.dst == c).sum())
    outdeg = int((el.src == c).sum())
    vals = {
        "# of vertices": float(n),
        "# of edges": float(len(g.edges)),
        "sum of weights": float(el.weight.sum()),
        "Loops": float(((el.src == c) & (el.dst == c)).sum()),
        "Degree(in)": float(indeg),
        "Degree(out)": float(outdeg),
        "Degree(all)": float(indeg + outdeg),
        "Neighborhood(1)": float(C.neighborhood_size(el, c, 1)),
        "Neighborhood(2)": float(C.neighborhood_size(el, c, 2)),
        "Closeness(wtd/in)": C.closeness(el, c, "in", weighted=True),
        "Closeness(wtd/out)": C.closeness(el, c, "out", weighted=True),
        "Closeness(wtd/all)": C.closeness(el, c, "all", weighted=True),
        "Closeness(uwtd/in)": C.closeness(el, c, "in"),
        "Closeness(uwtd/out)": C.closeness(el, c, "out"),
        "Closeness(uwtd/all)": C.closeness(el, c, "all"),
        "Betweenness": C.betweenness(el, c),
        "PageRank": float(C.pagerank(el)[c]),
        "cluster coefficient": C.clustering_coefficient(el, c),
        "Coreness(IN)": core["in"],
        "Coreness(OUT)": core["out"],
        "Coreness(all)": core["all"],
        "Coreness(IN)/n": core["in"] / n,
        "Coreness(OUT)/n": core["out"] / n,
        "Coreness(all)/n": core["all"] / n,
        "Hub": float(hub[c]),
        "Authority": float(auth[c]),
    }
    return FeatureVector({k: vals[k] for k in FEATURES}, GraphKind(kind), g.center)


def constant_columns(m: FeatureMatrix) -> list[str]:
    X = m.X
    return [name for j, name in enumerate(m.schema) if np.ptp(X[:, j]) == 0]


def prune_correlated(m: FeatureMatrix, threshold: float = PRUNE_THRESHOLD) -> FeatureMatrix:
    """Greedy scan in schema order dropping features too correlated with a kept one.

    Constant columns have no defined correlation; they are kept and flagged.
    """
    if len(m) < 2:
        raise ValueError("need at least two rows to estimate correlations")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    X = m.X
    constant = set(constant_columns(m))
    kept: list[int] = []
    for j, name in enumerate(m.schema):
        if name not in constant:
            redundant = False
            for i in kept:
                if m.schema[i] in constant:
                    continue
                r = np.corrcoef(X[:, i], X[:, j])[0, 1]
                if abs(r) > threshold:
                    redundant = True
                    break
            if redundant:
                continue
        kept.append(j)
    if constant:
        log.warning("constant features kept without correlation test: %s", sorted(constant))
    out = m.select([m.schema[j] for j in kept])
    out.flagged = tuple(n for n in m.schema if n in constant)
    return out


def freeze_schema(m: FeatureMatrix, threshold: float = PRUNE_THRESHOLD) -> tuple[str, ...]:
    """Fixed feature list for one view kind.

    Ego1-simple uses its fixed importance list. Other ego kinds prune at
    ``threshold`` and then truncate, or pad with the dropped features in
    superset order, to their fixed feature count.
    """
    kind = GraphKind(m.kind)
    if kind is GraphKind.EGO1_SIMPLE:
        return EGO1_SIMPLE_SCHEMA
    if kind not in FEATURE_COUNTS:
        return tuple(m.schema)
    want = FEATURE_COUNTS[kind]
    kept = list(prune_correlated(m, threshold).schema)
    if len(kept) >= want:
        return tuple(kept[:want])
    extra = [f for f in m.schema if f not in kept]
    chosen = set(kept + extra[: want - len(kept)])
    return tuple(f for f in m.schema if f in chosen)


def write_schemas(schemas: Mapping[GraphKind, Sequence[str]], fh: IO[str]) -> None:
    fh.write(f"# btcactors feature schema\nversion {SCHEMA_VERSION}\n")
    for kind, names in schemas.items():
        fh.write(f"[{GraphKind(kind).value}]\n")
        for name in names:
            fh.write(name + "\n")


def read_schemas(fh: Iterable[str]) -> dict[GraphKind, tuple[str, ...]]:
    schemas: dict[GraphKind, list[str]] = {}
    version = None
    current = None
    for line in fh:
        line = line.rstrip("\n")
        # "# of vertices" is a feature name, not a comment
        if not line or (line.startswith("#") and line not in FEATURES):
            continue
        if line.startswith("version "):
            version = int(line.split()[1])
        elif line.startswith("[") and line.endswith("]"):
            current = GraphKind(line[1:-1])
            schemas[current] = []
        elif current is None:
            raise ValueError(f"feature name outside a section: {line!r}")
        elif line not in FEATURES:
            raise ValueError(f"unknown feature {line!r}")
        else:
            schemas[current].append(line)
    if version != SCHEMA_VERSION:
        raise ValueError(f"schema version {version} unsupported (want {SCHEMA_VERSION})")
    return {k: tuple(v) for k, v in schemas.items()}


def summarize_by_class(m: FeatureMatrix) -> list[dict]:
    """Distribution summary per feature and class."""
    if any(r.label is None for r in m.rows):
        raise ValueError("summaries need labelled rows")
    X = m.X
    labels = np.array(m.labels)
    out = []
    for j, name in enumerate(m.schema):
        for cls in sorted(set(labels.tolist())):
            col = X[labels == cls, j]
            p25, med, p75 = np.percentile(col, [25, 50, 75])
            out.append(
                {
                    "feature": name,
                    "class": cls,
                    "min": float(col.min()),
                    "p25": float(p25),
                    "median": float(med),
                    "p75": float(p75),
                    "max": float(col.max()),
                    "mean": float(col.mean()),
                    "count": int(col.size),
                }
            )
    return out


SUMMARY_FIELDS = ("feature", "class", "min", "p25", "median", "p75", "max", "mean", "count")


def write_summary(rows: list[dict], fh: IO[str]) -> None:
    w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


_META = ("group", "actor", "kind", "label")


def write_feature_csv(rows: Iterable[FeatureVector], fh: IO[str], schema: Sequence[str] = FEATURES) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([*_META, *schema])
    for r in rows:
        w.writerow(
            [r.group or "", r.actor, GraphKind(r.graph_kind).value, r.label or ""]
            + [repr(r.values[k]) for k in schema]
        )


def read_feature_csv(fh: Iterable[str]) -> dict[GraphKind, FeatureMatrix]:
    """Feature rows grouped into one matrix per view kind."""
    reader = csv.reader(fh)
    header = next(reader)
    if tuple(header[:4]) != _META:
        raise ValueError(f"feature CSV must start with columns {_META}")
    schema = tuple(header[4:])
    by_kind: dict[GraphKind, list[FeatureVector]] = {}
    for row in reader:
        if not row:
            continue
        group, actor, kind, label = row[:4]
        kind = GraphKind(kind)
        vals = {k: float(v) for k, v in zip(schema, row[4:])}
        by_kind.setdefault(kind, []).append(
            FeatureVector(vals, kind, int(actor), label or None, group or None)
        )
    return {k: FeatureMatrix(k, schema, rows) for k, rows in by_kind.items()}


__all__ = [
    "CLASSES",
    "EGO1_SIMPLE_SCHEMA",
    "EGO_KINDS",
    "FEATURES",
    "FEATURE_COUNTS",
    "FeatureMatrix",
    "FeatureVector",
    "compute_features",
    "freeze_schema",
    "prune_correlated",
    "summarize_by_class",
]
