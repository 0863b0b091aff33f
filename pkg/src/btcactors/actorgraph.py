"""Actor-to-actor weighted multigraphs and their ego / simple views."""

from __future__ import annotations

import enum
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from typing import IO

import numpy as np

from . import kernels
from .chainstore import SAT_PER_BTC, ChainError, ChainIndex, Transaction
from .clustering import ClusterMap, actor_of
from .txgraph import TxSubgraph

COINBASE_ACTOR = -1
SMALL_GRAPH_THRESHOLD = 5


class GraphKind(str, enum.Enum):
    WHOLE = "whole"
    EGO1 = "ego1"
    EGO2 = "ego2"
    EGO3 = "ego3"
    EGO1_SIMPLE = "ego1_simple"
    EGO2_SIMPLE = "ego2_simple"
    EGO3_SIMPLE = "ego3_simple"
    WHOLE_SIMPLE = "whole_simple"

    @property
    def order(self) -> int | None:
        """Ego radius, or None for whole-graph views."""
        return None if self.value.startswith("whole") else int(self.value[3])

    @property
    def simple(self) -> bool:
        return self.value.endswith("_simple")


# the six views the classifier is trained on
EGO_KINDS = (
    GraphKind.EGO1_SIMPLE,
    GraphKind.EGO1,
    GraphKind.EGO2_SIMPLE,
    GraphKind.EGO2,
    GraphKind.EGO3_SIMPLE,
    GraphKind.EGO3,
)


@dataclass(frozen=True, order=True)
class ActorEdge:
    src: int
    dst: int
    weight: float
    tx: str


@dataclass(frozen=True)
class ActorGraph:
    vertices: frozenset[int]
    center: int
    edges: tuple[ActorEdge, ...]

    def __post_init__(self):
        if self.center not in self.vertices:
            raise ValueError(f"center {self.center} is not a vertex")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def total_weight(self) -> float:
        return float(sum(e.weight for e in self.edges))

    def canonical(self) -> tuple:
        return (self.center, tuple(sorted(self.vertices)), tuple(sorted(self.edges)))


def allocate_weights(tx: Transaction) -> list[tuple[str, str, float]]:
    """Split each output across the inputs in proportion to input amounts.

    Weights are in BTC. Only output amounts are allocated, so the fee never
    becomes an edge and the weights sum to the transaction's outputs.
    """
    if tx.is_coinbase:
        raise ChainError(f"{tx.txid}: coinbase transactions have no inputs to allocate")
    total_in = tx.input_total
    if total_in <= 0:
        raise ChainError(f"{tx.txid}: zero total input")
    out = []
    for i in tx.inputs:
        share = i.amount / total_in
        for o in tx.outputs:
            out.append((i.address, o.address, share * o.amount / SAT_PER_BTC))
    return out


def _tx_edges(tx: Transaction, cm: ClusterMap) -> Iterable[ActorEdge]:
    acc: dict[tuple[int, int], float] = defaultdict(float)
    if tx.is_coinbase:
        for o in tx.outputs:
            acc[COINBASE_ACTOR, actor_of(cm, o.address)] += o.amount / SAT_PER_BTC
    else:
        for src, dst, w in allocate_weights(tx):
            acc[actor_of(cm, src), actor_of(cm, dst)] += w
    for (s, d), w in acc.items():
        yield ActorEdge(s, d, w, tx.txid)


def build_actor_graph(sub: TxSubgraph, cm: ClusterMap, index: ChainIndex) -> ActorGraph:
    """Relabel every allocation of every subgraph transaction by actor.

    One edge per (transaction, source actor, destination actor); parallel
    edges across transactions and self-loops are kept.
    """
    edges: list[ActorEdge] = []
    txs = sorted((index.tx(t) for t in sub.nodes), key=lambda t: t.key)
    for tx in txs:
        edges.extend(_tx_edges(tx, cm))
    center = actor_of(cm, sub.seed)
    vertices = {center}
    for e in edges:
        vertices.add(e.src)
        vertices.add(e.dst)
    return ActorGraph(frozenset(vertices), center, tuple(edges))


def is_too_small(g: ActorGraph, threshold: int = SMALL_GRAPH_THRESHOLD) -> bool:
    """Whole graphs with fewer clustered actors than ``threshold`` are dropped."""
    return sum(1 for v in g.vertices if v != COINBASE_ACTOR) < threshold


def _undirected_csr(vertices: list[int], edges: Iterable[ActorEdge]):
    pos = {v: i for i, v in enumerate(vertices)}
    adj: list[list[int]] = [[] for _ in vertices]
    for e in edges:
        if e.src != e.dst:
            s, d = pos[e.src], pos[e.dst]
            adj[s].append(d)
            adj[d].append(s)
    indptr = np.zeros(len(vertices) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in adj])
    indices = np.fromiter((w for a in adj for w in a), dtype=np.int64, count=int(indptr[-1]))
    return indptr, indices


def ego_graph(g: ActorGraph, k: int) -> ActorGraph:
    """Actors within ``k`` undirected hops of the center, with induced edges."""
    if not 1 <= k <= 3:
        raise ValueError(f"ego order must be 1..3, got {k}")
    if g.center not in g.vertices:
        raise ValueError("center missing from graph")
    verts = sorted(g.vertices)
    indptr, indices = _undirected_csr(verts, g.edges)
    hops = kernels.bfs_hops(indptr, indices, verts.index(g.center))
    keep = frozenset(v for v, h in zip(verts, hops.tolist()) if 0 <= h <= k)
    edges = tuple(e for e in g.edges if e.src in keep and e.dst in keep)
    return ActorGraph(keep, g.center, edges)


def simplify(g: ActorGraph) -> ActorGraph:
    """Drop self-loops and merge parallel edges, summing their weights."""
    acc: dict[tuple[int, int], list] = {}
    for e in g.edges:
        if e.src == e.dst:
            continue
        slot = acc.setdefault((e.src, e.dst), [0.0, e.tx])
        slot[0] += e.weight
    edges = tuple(ActorEdge(s, d, w, tx) for (s, d), (w, tx) in sorted(acc.items()))
    return ActorGraph(g.vertices, g.center, edges)


def view(g: ActorGraph, kind: GraphKind) -> ActorGraph:
    out = g if kind.order is None else ego_graph(g, kind.order)
    return simplify(out) if kind.simple else out


def _actor_label(a: int) -> str:
    return "COINBASE" if a == COINBASE_ACTOR else str(a)


def _parse_actor(s: str) -> int:
    return COINBASE_ACTOR if s == "COINBASE" else int(s)


def write_actor_graph(g: ActorGraph, fh: IO[str], kind: GraphKind = GraphKind.WHOLE) -> None:
    fh.write(f"# center={_actor_label(g.center)}\tkind={GraphKind(kind).value}\n")
    fh.write("src_actor,dst_actor,weight_btc,txid\n")
    for e in g.edges:
        fh.write(f"{_actor_label(e.src)},{_actor_label(e.dst)},{e.weight!r},{e.tx}\n")
    connected = {e.src for e in g.edges} | {e.dst for e in g.edges}
    for v in sorted(g.vertices - connected):
        fh.write(f"# vertex={_actor_label(v)}\n")


def read_actor_graph(fh: Iterable[str]) -> tuple[ActorGraph, GraphKind]:
    lines = iter(fh)
    meta = dict(p.split("=", 1) for p in next(lines).strip()[2:].split("\t"))
    if next(lines).strip() != "src_actor,dst_actor,weight_btc,txid":
        raise ValueError("unexpected actor graph header")
    center = _parse_actor(meta["center"])
    vertices, edges = {center}, []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line.startswith("# vertex="):
            vertices.add(_parse_actor(line[len("# vertex=") :]))
            continue
        s, d, w, tx = line.split(",")
        e = ActorEdge(_parse_actor(s), _parse_actor(d), float(w), tx)
        edges.append(e)
        vertices.update((e.src, e.dst))
    return ActorGraph(frozenset(vertices), center, tuple(edges)), GraphKind(meta["kind"])
