"""Small numerically careful helpers used by several modules."""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Numerically stable logistic function; preserves scalar vs array inputs."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out
