"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

H = 1e-4


def numeric_grad(f, x, h=H):
    """d f / d x for a scalar-valued ``f`` by central differences (x mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-3):
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0
