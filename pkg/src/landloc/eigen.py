"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""

from __future__ import annotations

import math

import numpy as np


class NotSymmetric(ValueError):
    pass


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 64):
    """Eigen-decomposition of a real symmetric matrix.

    Returns ``(w, V)`` with eigenvalues sorted in descending order and the
    matching orthonormal eigenvectors in the columns of ``V``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = np.abs(A).max() if A.size else 0.0
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(scale, 1.0)):
        raise NotSymmetric("jacobi_eigh needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 0 or scale == 0.0:
        return np.zeros(n), V

    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(A, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]
