"""Central finite differences and the normwise relative error used to judge them."""
from __future__ import annotations

import numpy as np


def numerical_grad(fn, arrays: dict, names=None, eps: float = 1e-5) -> dict:
    """Central differences of scalar ``fn()`` w.r.t. each array, perturbed in place."""
    out = {}
    for name in names or list(arrays):
        arr = arrays[name]
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = fn()
            arr[idx] = old - eps
            down = fn()
            arr[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; 0 when both are identically zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)
