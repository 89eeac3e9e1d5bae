"""Central finite differences for gradient checks."""

import numpy as np


def central_difference(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (only ``indices`` when given)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_idx = range(x.size) if indices is None else indices
    for i in flat_idx:
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
