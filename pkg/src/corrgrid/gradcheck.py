"""Central finite-difference gradient check."""

from __future__ import annotations

import numpy as np


def numerical_gradient(f, params: dict, eps: float = 1e-6) -> dict:
    """Central differences of scalar ``f(params)`` for every parameter entry."""
    grads = {}
    for k, v in params.items():
        g = np.zeros_like(v, dtype=float)
        it = np.nditer(v, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = v[i]
            v[i] = orig + eps
            up = f(params)
            v[i] = orig - eps
            down = f(params)
            v[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        grads[k] = g
    return grads


def relative_error(analytic: dict, numeric: dict) -> float:
    """Largest absolute discrepancy divided by the largest gradient magnitude.

    Scaling by the whole gradient (not entry-wise) keeps near-zero entries from
    dominating through round-off.
    """
    diff = max(float(np.max(np.abs(analytic[k] - numeric[k]))) for k in analytic)
    scale = max(max(float(np.max(np.abs(analytic[k]))), float(np.max(np.abs(numeric[k]))))
                for k in analytic)
    return diff / max(scale, 1e-12)
