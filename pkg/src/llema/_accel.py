"""Backend selection for the pairwise-dominance kernel.

The only numerically hot loop in the package is the O(n^2) non-domination
scan behind Pareto-front extraction. It ships in two equivalent forms: a
numba @njit kernel and a chunked pure-numpy path. Selection is controlled
by the LLEMA_NUMBA env var: "0"/"false"/"off" forces numpy, "1"/"true"
forces numba (import errors surface), anything else auto-detects.
"""

from __future__ import annotations

import os

import numpy as np


def _flag() -> str:
    return os.environ.get("LLEMA_NUMBA", "auto").strip().lower()


def nondominated_mask_numpy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """keep[q] is True iff no point p weakly dominates q with one strict win.

    Both axes are oriented so that larger is better.
    """
    n = x.shape[0]
    keep = np.ones(n, dtype=bool)
    chunk = 512
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        ge_x = x[:, None] >= x[None, start:stop]
        ge_y = y[:, None] >= y[None, start:stop]
        strict = (x[:, None] > x[None, start:stop]) | (y[:, None] > y[None, start:stop])
        keep[start:stop] = ~(ge_x & ge_y & strict).any(axis=0)
    return keep


def _build_numba_kernel():
    from numba import njit

    @njit(cache=True)
    def kernel(x, y):
        n = x.shape[0]
        keep = np.ones(n, dtype=np.bool_)
        for q in range(n):
            xq = x[q]
            yq = y[q]
            for p in range(n):
                if x[p] >= xq and y[p] >= yq and (x[p] > xq or y[p] > yq):
                    keep[q] = False
                    break
        return keep

    return kernel


def _select():
    flag = _flag()
    if flag in ("0", "false", "off", "no"):
        return "numpy", nondominated_mask_numpy
    try:
        kernel = _build_numba_kernel()
        return "numba", kernel
    except ImportError:
        if flag in ("1", "true", "on", "yes"):
            raise
        return "numpy", nondominated_mask_numpy


BACKEND, _kernel = _select()


def nondominated_mask(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Dispatch to the selected backend (axes oriented larger-is-better)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _kernel(x, y)


def warmup() -> None:
    """Force JIT compilation so timed sections measure steady-state cost."""
    nondominated_mask(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
