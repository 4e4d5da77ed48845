"""Symmetric eigendecomposition by cyclic Jacobi rotations."""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

MAX_SWEEPS = 100
OFF_TOL = 1e-12
SYM_TOL = 1e-10


def eigen_symmetric(H: np.ndarray):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Cyclic sweeps of Jacobi rotations run until the off-diagonal Frobenius
    norm drops below OFF_TOL times the matrix Frobenius norm; more than
    MAX_SWEEPS sweeps raises NumericError. Eigenvectors are returned as
    columns, ordered with their eigenvalues.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {H.shape}")
    n = H.shape[0]
    scale = max(np.abs(H).max(initial=0.0), 1.0)
    if np.abs(H - H.T).max(initial=0.0) > SYM_TOL * scale:
        raise ShapeError("matrix is not symmetric within tolerance")
    A = 0.5 * (H + H.T)
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(n), V
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.sum(A[off_mask] ** 2))
        if off < OFF_TOL * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                # stable tangent of the rotation angle that zeroes A[p, q]
                diff = A[q, q] - A[p, p]
                if abs(apq) < abs(diff) * 1e-36:
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                A[p, q] = 0.0
                A[q, p] = 0.0
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    else:
        raise NumericError(f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")
    vals = A.diagonal().copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], V[:, order]
