"""Shared finite-difference oracles for gradient tests.

Central differences in float64. Relative error compares each entry against
the oracle with a floor of 1% of the oracle's largest entry, so near-zero
entries are judged on the oracle's own scale rather than on FD noise.
"""
import numpy as np


def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_error(analytic, oracle):
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    oracle = np.asarray(oracle, dtype=np.float64).reshape(-1)
    scale = max(np.abs(oracle).max(), 1e-12)
    denom = np.maximum(np.abs(oracle), 0.01 * scale)
    return float(np.max(np.abs(analytic - oracle) / denom))
