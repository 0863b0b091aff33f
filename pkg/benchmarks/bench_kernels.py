"""Compare the compiled and pure-Python graph kernels on random graphs.

    python3 benchmarks/bench_kernels.py --vertices 5000 --edges 25000

Each kernel runs on identical inputs under both backends; results are
checked for agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from btcactors import kernels
from btcactors.centrality import EdgeList


def _best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(n_vertices, n_edges, seed):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_vertices, n_edges)
    dst = rng.integers(0, n_vertices, n_edges)
    w = rng.lognormal(-1, 1, n_edges)
    g = EdgeList(n_vertices, src, dst, w)
    out_ptr, out_idx, out_w = g.csr("out")
    all_ptr, all_idx, _ = g.csr("all")
    return {
        "union_find_labels": lambda m: m.union_find_labels(n_vertices, src, dst),
        "bfs_hops": lambda m: m.bfs_hops(all_ptr, all_idx, 0),
        "dijkstra": lambda m: m.dijkstra(out_ptr, out_idx, out_w, 0),
        "betweenness_of": lambda m: m.betweenness_of(out_ptr, out_idx, 0),
        "coreness": lambda m: m.coreness(all_ptr, all_idx),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vertices", type=int, default=2000)
    ap.add_argument("--edges", type=int, default=10000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in kernels.BACKENDS:
        print("compiled kernels not built; only the Python backend is available")
    print(f"graph: {args.vertices} vertices, {args.edges} edges, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in kernels.BACKENDS) + f"{'speedup':>10}")
    for name, run in cases(args.vertices, args.edges, args.seed).items():
        times, results = {}, {}
        for backend, mod in kernels.BACKENDS.items():
            times[backend], results[backend] = _best_of(lambda: run(mod), args.repeat)
        ref = results["python"]
        for backend, res in results.items():
            if not np.allclose(np.asarray(res, dtype=float), np.asarray(ref, dtype=float), equal_nan=True):
                raise SystemExit(f"{name}: {backend} disagrees with the Python backend")
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        row = "".join(f"{times[b] * 1e3:>10.2f}ms" for b in kernels.BACKENDS)
        print(f"{name:<20}{row}{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
