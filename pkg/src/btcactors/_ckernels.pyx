# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph kernels. Signatures mirror :mod:`btcactors._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline i64 _find(i64[::1] parent, i64 x) noexcept nogil:
    cdef i64 root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


def union_find_labels(i64 n, const i64[::1] a, const i64[::1] b):
    """Root of every element after unioning each pair ``(a[i], b[i])``."""
    parent_arr = np.arange(n, dtype=np.int64)
    size_arr = np.ones(n, dtype=np.int64)
    cdef i64[::1] parent = parent_arr
    cdef i64[::1] size = size_arr
    cdef Py_ssize_t i, m = a.shape[0]
    cdef i64 ra, rb
    with nogil:
        for i in range(m):
            ra = _find(parent, a[i])
            rb = _find(parent, b[i])
            if ra == rb:
                continue
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
        for i in range(n):
            parent[i] = _find(parent, i)
    return parent_arr


def bfs_hops(const i64[::1] indptr, const i64[::1] indices, i64 source):
    """Hop distance from ``source``; -1 where unreachable."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.full(n, -1, dtype=np.int64)
    queue_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef i64[::1] dist = dist_arr
    cdef i64[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0
    cdef i64 v, w, k
    with nogil:
        dist[source] = 0
        queue[tail] = source
        tail += 1
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
    return dist_arr


cdef inline void _sift_down(double[::1] hk, i64[::1] hv, Py_ssize_t size, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t c
    cdef double key = hk[i]
    cdef i64 val = hv[i]
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and hk[c + 1] < hk[c]:
            c += 1
        if hk[c] >= key:
            break
        hk[i] = hk[c]
        hv[i] = hv[c]
        i = c
    hk[i] = key
    hv[i] = val


cdef inline void _sift_up(double[::1] hk, i64[::1] hv, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t p
    cdef double key = hk[i]
    cdef i64 val = hv[i]
    while i > 0:
        p = (i - 1) // 2
        if hk[p] <= key:
            break
        hk[i] = hk[p]
        hv[i] = hv[p]
        i = p
    hk[i] = key
    hv[i] = val


def dijkstra(const i64[::1] indptr, const i64[::1] indices, const double[::1] weights, i64 source):
    """Weighted shortest-path length from ``source``; inf where unreachable."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = indices.shape[0]
    dist_arr = np.full(n, np.inf, dtype=np.float64)
    done_arr = np.zeros(n, dtype=np.uint8)
    hk_arr = np.empty(m + 1, dtype=np.float64)
    hv_arr = np.empty(m + 1, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef cnp.uint8_t[::1] done = done_arr
    cdef double[::1] hk = hk_arr
    cdef i64[::1] hv = hv_arr
    cdef Py_ssize_t size = 0
    cdef i64 v, w, k
    cdef double d, nd
    with nogil:
        dist[source] = 0.0
        hk[0] = 0.0
        hv[0] = source
        size = 1
        while size > 0:
            d = hk[0]
            v = hv[0]
            size -= 1
            if size > 0:
                hk[0] = hk[size]
                hv[0] = hv[size]
                _sift_down(hk, hv, size, 0)
            if done[v]:
                continue
            done[v] = 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                nd = d + weights[k]
                if nd < dist[w]:
                    dist[w] = nd
                    hk[size] = nd
                    hv[size] = w
                    _sift_up(hk, hv, size)
                    size += 1
    return dist_arr


def betweenness_of(const i64[::1] indptr, const i64[::1] indices, i64 target):
    """Unnormalized shortest-path betweenness of ``target`` (Brandes).

    Parallel edges count as distinct shortest paths.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.empty(n, dtype=np.int64)
    sigma_arr = np.empty(n, dtype=np.float64)
    delta_arr = np.empty(n, dtype=np.float64)
    order_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef i64[::1] dist = dist_arr
    cdef double[::1] sigma = sigma_arr
    cdef double[::1] delta = delta_arr
    cdef i64[::1] order = order_arr
    cdef Py_ssize_t head, tail, j
    cdef i64 s, v, w, k
    cdef double total = 0.0
    with nogil:
        for s in range(n):
            if s == target:
                continue
            for j in range(n):
                dist[j] = -1
                sigma[j] = 0.0
                delta[j] = 0.0
            dist[s] = 0
            sigma[s] = 1.0
            order[0] = s
            head = 0
            tail = 1
            while head < tail:
                v = order[head]
                head += 1
                for k in range(indptr[v], indptr[v + 1]):
                    w = indices[k]
                    if dist[w] < 0:
                        dist[w] = dist[v] + 1
                        order[tail] = w
                        tail += 1
                    if dist[w] == dist[v] + 1:
                        sigma[w] += sigma[v]
            if dist[target] < 0:
                continue
            for j in range(tail - 1, -1, -1):
                v = order[j]
                if dist[v] < dist[target]:
                    break
                for k in range(indptr[v], indptr[v + 1]):
                    w = indices[k]
                    if dist[w] == dist[v] + 1:
                        delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            total += delta[target]
    return total


def coreness(const i64[::1] indptr, const i64[::1] indices):
    """k-core numbers by bucket peeling (Batagelj-Zaversnik).

    ``indices[indptr[v]:indptr[v+1]]`` lists the vertices whose degree drops
    when ``v`` is peeled; a vertex's degree is its number of appearances.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = indices.shape[0]
    deg_arr = np.zeros(n, dtype=np.int64)
    cdef i64[::1] deg = deg_arr
    cdef Py_ssize_t i, k
    cdef i64 md = 0, d, start, num, v, u, du, pu, pw, w
    for k in range(m):
        deg[indices[k]] += 1
    for i in range(n):
        if deg[i] > md:
            md = deg[i]
    bin_arr = np.zeros(md + 1, dtype=np.int64)
    pos_arr = np.empty(n, dtype=np.int64)
    vert_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef i64[::1] bins = bin_arr
    cdef i64[::1] pos = pos_arr
    cdef i64[::1] vert = vert_arr
    with nogil:
        for i in range(n):
            bins[deg[i]] += 1
        start = 0
        for d in range(md + 1):
            num = bins[d]
            bins[d] = start
            start += num
        for i in range(n):
            pos[i] = bins[deg[i]]
            vert[pos[i]] = i
            bins[deg[i]] += 1
        for d in range(md, 0, -1):
            bins[d] = bins[d - 1]
        if md >= 0:
            bins[0] = 0
        for i in range(n):
            v = vert[i]
            for k in range(indptr[v], indptr[v + 1]):
                u = indices[k]
                if deg[u] > deg[v]:
                    du = deg[u]
                    pu = pos[u]
                    pw = bins[du]
                    w = vert[pw]
                    if u != w:
                        pos[u] = pw
                        vert[pu] = w
                        pos[w] = pu
                        vert[pw] = u
                    bins[du] += 1
                    deg[u] -= 1
    return deg_arr
