"""Vertex centralities on directed multigraphs given as edge arrays.

Conventions follow igraph defaults: weights are path lengths for
closeness, parallel edges count as distinct shortest paths, and
closeness on disconnected graphs uses only the reachable set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

# zero-valued edges still cost one satoshi of path length
MIN_EDGE_LENGTH = 1e-8


@dataclass(frozen=True)
class EdgeList:
    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_pairs(cls, n: int, pairs, weights=None) -> "EdgeList":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=np.float64)
        return cls(n, pairs[:, 0].copy(), pairs[:, 1].copy(), w)

    @property
    def loops(self) -> np.ndarray:
        return self.src == self.dst

    def csr(self, mode: str = "out", with_loops: bool = False):
        """CSR adjacency and the matching edge weights."""
        keep = slice(None) if with_loops else ~self.loops
        s, d, w = self.src[keep], self.dst[keep], self.weight[keep]
        if mode == "in":
            s, d = d, s
        elif mode == "all":
            s, d, w = np.concatenate([s, d]), np.concatenate([d, s]), np.concatenate([w, w])
        elif mode != "out":
            raise ValueError(f"mode must be in/out/all, got {mode!r}")
        order = np.lexsort((d, s))
        s, d, w = s[order], d[order], w[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(s, minlength=self.n), out=indptr[1:])
        return indptr, np.ascontiguousarray(d), np.ascontiguousarray(w)


def closeness(g: EdgeList, v: int, mode: str = "out", weighted: bool = False) -> float:
    """Normalized closeness of ``v`` over the vertices it can reach.

    ``mode="out"`` measures distances from ``v``, ``"in"`` distances to it.
    The score ``(r-1)/sum(d)`` over the ``r`` reachable vertices (``v``
    included) is scaled by ``(r-1)/(n-1)``; an isolated vertex scores 0.
    """
    indptr, indices, w = g.csr(mode)
    if weighted:
        dist = kernels.dijkstra(indptr, indices, np.maximum(w, MIN_EDGE_LENGTH), v)
        reach = np.isfinite(dist)
    else:
        dist = kernels.bfs_hops(indptr, indices, v).astype(np.float64)
        reach = dist >= 0
    r = int(reach.sum())
    if r <= 1 or g.n <= 1:
        return 0.0
    total = float(dist[reach].sum())
    return (r - 1) / total * (r - 1) / (g.n - 1)


def betweenness(g: EdgeList, v: int) -> float:
    """Directed, unweighted, unnormalized betweenness of ``v``."""
    indptr, indices, _ = g.csr("out")
    return float(kernels.betweenness_of(indptr, indices, v))


def pagerank(
    g: EdgeList, damping: float = 0.85, tol: float = 1e-12, max_iter: int = 200
) -> np.ndarray:
    """Weighted PageRank by power iteration; dangling mass spreads uniformly.

    Self-loops and parallel edges contribute their weight.
    """
    n = g.n
    if n == 0:
        return np.zeros(0)
    out_strength = np.bincount(g.src, weights=g.weight, minlength=n)
    dangling = out_strength <= 0
    safe = np.where(dangling, 1.0, out_strength)
    frac = g.weight / safe[g.src]
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        flow = np.bincount(g.dst, weights=frac * x[g.src], minlength=n)
        nxt = damping * (flow + x[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        err = np.abs(nxt - x).sum()
        x = nxt
        if err < tol:
            break
    return x


def clustering_coefficient(g: EdgeList, v: int) -> float:
    """Local transitivity of ``v`` in the undirected simple view; 0 if degree < 2."""
    keep = ~g.loops
    s, d = g.src[keep], g.dst[keep]
    nbrs = set(d[s == v].tolist()) | set(s[d == v].tolist())
    k = len(nbrs)
    if k < 2:
        return 0.0
    among = {(min(a, b), max(a, b)) for a, b in zip(s.tolist(), d.tolist()) if a in nbrs and b in nbrs}
    return len(among) / (k * (k - 1) / 2)


def coreness(g: EdgeList, mode: str = "all") -> np.ndarray:
    """k-core index of every vertex, degrees counted with multiplicity.

    ``mode="in"`` peels by in-degree, ``"out"`` by out-degree. Self-loops
    are ignored.
    """
    # peeling v lowers the mode-degree of these neighbours
    affected = {"in": "out", "out": "in", "all": "all"}[mode]
    indptr, indices, _ = g.csr(affected)
    return kernels.coreness(indptr, indices)


def hits(g: EdgeList, tol: float = 1e-12, max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Hub and authority scores, each scaled so its maximum is 1.

    Unweighted; parallel edges add multiplicity. Power iteration from the
    uniform vector keeps the result deterministic when the leading
    eigenvalue is repeated. A graph without edges scores 0 everywhere.
    """
    n = g.n
    if n == 0 or len(g.src) == 0:
        return np.zeros(n), np.zeros(n)
    src, dst = g.src, g.dst

    def hub_of(auth):
        return np.bincount(src, weights=auth[dst], minlength=n)

    auth = np.ones(n)
    for _ in range(max_iter):
        nxt = np.bincount(dst, weights=hub_of(auth)[src], minlength=n)
        nxt /= nxt.max()
        done = np.abs(nxt - auth).max() < tol
        auth = nxt
        if done:
            break
    hub = hub_of(auth)
    return hub / hub.max(), auth


def neighborhood_size(g: EdgeList, v: int, order: int) -> int:
    """Vertices within ``order`` undirected hops of ``v``, itself included."""
    indptr, indices, _ = g.csr("all")
    hops = kernels.bfs_hops(indptr, indices, v)
    return int(((hops >= 0) & (hops <= order)).sum())
