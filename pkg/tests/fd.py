"""Central finite differences, kept independent of every backward pass."""
import numpy as np


def numeric_grad(f, x, h=1e-3, index=None):
    """d f / d x by central differences; perturbs ``x`` in place and restores it."""
    g = np.zeros_like(x)
    it = np.ndindex(*x.shape) if index is None else index
    for idx in it:
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-12):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
