"""Weighted absolute orientation (rigid Procrustes).

Minimises ``sum_i w_i ||b_i - R a_i - t||^2`` over proper rotations and
translations using the SVD of the weighted cross-covariance, with the last
singular direction flipped when the unconstrained optimum is a reflection.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInput
from .geometry import RigidTransform

# Ratio of the middle to the largest scatter eigenvalue below which the source
# points are treated as collinear.
COLLINEAR_RATIO = 1e-12


def _weighted_moments(a, b, w):
    total = w.sum()
    wn = w / total
    ca = (wn[:, None] * a).sum(axis=0)
    cb = (wn[:, None] * b).sum(axis=0)
    da = a - ca
    db = b - cb
    cross = np.einsum("i,ij,ik->jk", wn, da, db)
    scatter = np.einsum("i,ij,ik->jk", wn, da, da)
    return ca, cb, cross, scatter


def _rotation_from_cross(cross):
    u, _, vt = np.linalg.svd(cross)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def fit_pose(a, b, weights=None) -> RigidTransform:
    """Best rigid motion carrying ``a`` onto ``b`` in the weighted least-squares sense.

    Parameters
    ----------
    a, b : array_like, shape (n, 3)
        Corresponding source and target points.
    weights : array_like, shape (n,), optional
        Non-negative weights; pairs with zero weight are ignored.

    Raises
    ------
    DegenerateInput
        Fewer than three positive-weight pairs, or the weighted source points
        lie on a line so the rotation about it is unidentifiable.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if weights is None:
        w = np.ones(len(a))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
    keep = w > 0
    if keep.sum() < 3:
        raise DegenerateInput(f"need at least 3 positive-weight pairs, got {int(keep.sum())}")
    a, b, w = a[keep], b[keep], w[keep]

    ca, cb, cross, scatter = _weighted_moments(a, b, w)
    ev = np.linalg.eigvalsh(scatter)
    if ev[1] <= COLLINEAR_RATIO * ev[2] or ev[2] <= 0:
        raise DegenerateInput("source points are collinear")
    r = _rotation_from_cross(cross)
    return RigidTransform(r, cb - r @ ca)


def fit_pose_batch(a, b):
    """Unweighted fits for a stack of small problems.

    ``a`` and ``b`` have shape ``(m, k, 3)``. Returns rotations ``(m, 3, 3)``,
    translations ``(m, 3)`` and a boolean mask of non-degenerate problems.
    Used for minimal-sample hypotheses in RANSAC.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ca = a.mean(axis=1)
    cb = b.mean(axis=1)
    da = a - ca[:, None, :]
    db = b - cb[:, None, :]
    cross = np.einsum("mij,mik->mjk", da, db)
    scatter = np.einsum("mij,mik->mjk", da, da)
    ev = np.linalg.eigvalsh(scatter)
    ok = (ev[:, 2] > 0) & (ev[:, 1] > COLLINEAR_RATIO * ev[:, 2])
    u, _, vt = np.linalg.svd(cross)
    v = np.swapaxes(vt, 1, 2)
    ut = np.swapaxes(u, 1, 2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    v[:, :, 2] *= d[:, None]
    r = v @ ut
    t = cb - np.einsum("mij,mj->mi", r, ca)
    return r, t, ok
