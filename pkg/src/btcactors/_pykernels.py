"""Pure-Python graph kernels, used when the compiled module is unavailable.

Graphs arrive in CSR form: the neighbours of ``v`` are
``indices[indptr[v]:indptr[v + 1]]``.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np


def union_find_labels(n, a, b):
    parent = list(range(n))
    size = [1] * n

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for x, y in zip(a.tolist(), b.tolist()):
        rx, ry = find(x), find(y)
        if rx == ry:
            continue
        if size[rx] < size[ry]:
            rx, ry = ry, rx
        parent[ry] = rx
        size[rx] += size[ry]
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def bfs_hops(indptr, indices, source):
    ptr, idx = indptr.tolist(), indices.tolist()
    dist = [-1] * (len(ptr) - 1)
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in idx[ptr[v] : ptr[v + 1]]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return np.array(dist, dtype=np.int64)


def dijkstra(indptr, indices, weights, source):
    ptr, idx, wts = indptr.tolist(), indices.tolist(), weights.tolist()
    n = len(ptr) - 1
    dist = [float("inf")] * n
    done = [False] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for k in range(ptr[v], ptr[v + 1]):
            w = idx[k]
            nd = d + wts[k]
            if nd < dist[w]:
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return np.array(dist, dtype=np.float64)


def betweenness_of(indptr, indices, target):
    ptr, idx = indptr.tolist(), indices.tolist()
    n = len(ptr) - 1
    total = 0.0
    for s in range(n):
        if s == target:
            continue
        dist = [-1] * n
        sigma = [0.0] * n
        dist[s] = 0
        sigma[s] = 1.0
        order = [s]
        head = 0
        while head < len(order):
            v = order[head]
            head += 1
            for w in idx[ptr[v] : ptr[v + 1]]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        dt = dist[target]
        if dt < 0:
            continue
        delta = [0.0] * n
        for v in reversed(order):
            if dist[v] < dt:
                break
            for w in idx[ptr[v] : ptr[v + 1]]:
                if dist[w] == dist[v] + 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
        total += delta[target]
    return total


def coreness(indptr, indices):
    ptr, idx = indptr.tolist(), indices.tolist()
    n = len(ptr) - 1
    deg = [0] * n
    for u in idx:
        deg[u] += 1
    md = max(deg, default=0)
    bins = [0] * (md + 1)
    for d in deg:
        bins[d] += 1
    start = 0
    for d in range(md + 1):
        bins[d], start = start, start + bins[d]
    pos = [0] * n
    vert = [0] * n
    for v in range(n):
        pos[v] = bins[deg[v]]
        vert[pos[v]] = v
        bins[deg[v]] += 1
    for d in range(md, 0, -1):
        bins[d] = bins[d - 1]
    bins[0] = 0
    for i in range(n):
        v = vert[i]
        for u in idx[ptr[v] : ptr[v + 1]]:
            if deg[u] > deg[v]:
                du, pu = deg[u], pos[u]
                pw = bins[du]
                w = vert[pw]
                if u != w:
                    pos[u], vert[pu] = pw, w
                    pos[w], vert[pw] = pu, u
                bins[du] += 1
                deg[u] -= 1
    return np.array(deg, dtype=np.int64)
