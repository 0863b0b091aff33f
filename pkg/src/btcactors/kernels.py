"""Kernel backend selection.

The compiled extension is used when it was built; set
``BTCACTORS_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("BTCACTORS_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
    _impl = _ckernels
else:
    BACKEND = "python"
    _impl = _pykernels

union_find_labels = _impl.union_find_labels
bfs_hops = _impl.bfs_hops
dijkstra = _impl.dijkstra
betweenness_of = _impl.betweenness_of
coreness = _impl.coreness
