"""Comparison methods: Naive (one fit per initial cluster), Sequential RANSAC
and T-Linkage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput
from .estimate import Hypothesis, MultiModelEstimate
from .geometry import OUTLIER, CorrespondenceSet, RigidTransform, cluster_ids, residuals
from .horn import fit_pose, fit_pose_batch


def _hypothesis(corrs, members, pose):
    r = residuals(pose, corrs.a[members], corrs.b[members])
    return Hypothesis(
        pose=pose,
        sigma=float(np.sqrt(np.mean(r * r))),
        weight=len(members) / len(corrs),
        centroid=corrs.a[members].mean(axis=0),
    )


def _estimate(corrs, groups, poses, iterations=0):
    labels = np.full(len(corrs), OUTLIER, dtype=np.int64)
    hyps = []
    for members, pose in zip(groups, poses):
        labels[members] = len(hyps)
        hyps.append(_hypothesis(corrs, members, pose))
    return MultiModelEstimate(hyps, labels, iterations)


def solve_naive(corrs: CorrespondenceSet, init) -> MultiModelEstimate:
    """One unweighted pose per initial cluster; reflects the quality of the init.

    Clusters with fewer than three points (or collinear ones) become outliers.
    """
    init = np.asarray(init, dtype=np.int64)
    if len(init) != len(corrs):
        raise ValueError("init labeling length does not match correspondences")
    groups, poses = [], []
    for c in cluster_ids(init):
        members = np.flatnonzero(init == c)
        if len(members) < 3:
            continue
        try:
            pose = fit_pose(corrs.a[members], corrs.b[members])
        except DegenerateInput:
            continue
        groups.append(members)
        poses.append(pose)
    return _estimate(corrs, groups, poses)


@dataclass(frozen=True)
class SransacParams:
    inlier_threshold: float = 0.01
    max_iterations: int = 1000
    min_inliers_to_continue: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def _minimal_samples(rng, n, m):
    """``m`` triples drawn uniformly without replacement from ``range(n)``."""
    i0 = rng.integers(0, n, m)
    i1 = rng.integers(0, n - 1, m)
    i1 += i1 >= i0
    lo, hi = np.minimum(i0, i1), np.maximum(i0, i1)
    i2 = rng.integers(0, n - 2, m)
    i2 += i2 >= lo
    i2 += i2 >= hi
    return np.stack([i0, i1, i2], axis=1)


def _inlier_counts(a, b, rot, trans, thr2, chunk_elems=4_000_000):
    """Number of points with squared residual below ``thr2`` for each pose.

    ``|b - R a - t|^2`` is expanded into one matrix product between per-point
    features ``[b (x) a, b, a, 1]`` and per-pose coefficients, on centred
    data to keep the cancellation error far below any usable threshold.
    """
    n, m = len(a), len(rot)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    a, b = a - ca, b - cb
    trans = trans + rot @ ca - cb
    feats = np.hstack([(b[:, :, None] * a[:, None, :]).reshape(n, 9), b, a, np.ones((n, 1))])
    coef = np.vstack([
        -2.0 * rot.reshape(m, 9).T,
        -2.0 * trans.T,
        2.0 * np.einsum("mij,mi->mj", rot, trans).T,
        np.einsum("mi,mi->m", trans, trans)[None],
    ])
    base = (np.einsum("ni,ni->n", a, a) + np.einsum("ni,ni->n", b, b))[:, None]
    counts = np.empty(m, dtype=np.int64)
    step = max(1, chunk_elems // max(n, 1))
    for s in range(0, m, step):
        counts[s:s + step] = np.count_nonzero(feats @ coef[:, s:s + step] + base < thr2, axis=0)
    return counts


def _ransac_round(a, b, rng, params):
    n = len(a)
    samples = _minimal_samples(rng, n, params.max_iterations)
    rot, trans, ok = fit_pose_batch(a[samples], b[samples])
    counts = _inlier_counts(a, b, rot, trans, params.inlier_threshold ** 2)
    counts[~ok] = -1
    best = int(np.argmax(counts))
    if counts[best] <= 0:
        return None, None
    pose = RigidTransform(rot[best], trans[best])
    return pose, np.flatnonzero(residuals(pose, a, b) < params.inlier_threshold)


def solve_sransac(corrs: CorrespondenceSet, params: SransacParams = SransacParams()) -> MultiModelEstimate:
    """Sequential RANSAC: find the best-supported motion, refit it on its
    consensus set, remove those points and repeat until support runs out."""
    if len(corrs) == 0:
        raise ValueError("empty correspondence set")
    rng = np.random.default_rng(params.seed)
    remaining = np.arange(len(corrs))
    groups, poses = [], []
    rounds = 0
    while len(remaining) >= 3:
        rounds += 1
        pose, inl = _ransac_round(corrs.a[remaining], corrs.b[remaining], rng, params)
        if pose is None or len(inl) < params.min_inliers_to_continue:
            break
        members = remaining[inl]
        try:
            pose = fit_pose(corrs.a[members], corrs.b[members])
        except DegenerateInput:
            pass
        groups.append(members)
        poses.append(pose)
        remaining = np.delete(remaining, inl)
    return _estimate(corrs, groups, poses, rounds)


@dataclass(frozen=True)
class TlinkageParams:
    tau_t: float = 0.2
    merge_stop: float = 1.0

    def __post_init__(self):
        if not self.tau_t > 0:
            raise ValueError("tau_t must be positive")
        if not 0 < self.merge_stop <= 1:
            raise ValueError("merge_stop must lie in (0, 1]")


def preference(d, tau_t: float):
    """``exp(-d / tau_t)`` for ``d <= 5 tau_t``, zero beyond."""
    d = np.asarray(d, dtype=np.float64)
    out = np.where(d <= 5.0 * tau_t, np.exp(-d / tau_t), 0.0)
    return float(out) if out.ndim == 0 else out


def tanimoto_distance(u, v) -> float:
    """``1 - <u,v> / (|u|^2 + |v|^2 - <u,v>)``; 1 when both vectors vanish."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("preference vectors differ in length")
    uv = float(u @ v)
    den = float(u @ u) + float(v @ v) - uv
    if den <= 0:
        return 1.0
    return 1.0 - uv / den


def _tanimoto_matrix(prefs):
    g = prefs @ prefs.T
    sq = np.diag(g)
    den = sq[:, None] + sq[None, :] - g
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(den > 0, 1.0 - g / den, 1.0)
    np.fill_diagonal(d, np.inf)
    return d


def _try_fit(corrs, members):
    if len(members) < 3:
        return None
    try:
        return fit_pose(corrs.a[members], corrs.b[members])
    except DegenerateInput:
        return None


def solve_tlinkage(corrs: CorrespondenceSet, init, params: TlinkageParams = TlinkageParams()) -> MultiModelEstimate:
    """Agglomerative clustering in preference space.

    Every cluster with a fittable pose contributes one column of the point
    preference matrix; a cluster's own preference vector is the element-wise
    minimum over its members. The pair with the smallest Tanimoto distance is
    merged (ties go to the lowest indices), the merged cluster is refitted and
    its column refreshed, until no pair is closer than ``merge_stop``.
    Init outliers stay outliers.
    """
    init = np.asarray(init, dtype=np.int64)
    if len(init) != len(corrs):
        raise ValueError("init labeling length does not match correspondences")
    ids = cluster_ids(init)
    if len(ids) == 0:
        return _estimate(corrs, [], [])
    members = [np.flatnonzero(init == c) for c in ids]
    poses = [_try_fit(corrs, m) for m in members]
    owner = np.full(len(corrs), -1, dtype=np.int64)
    for c, m in enumerate(members):
        owner[m] = c
    inside = owner >= 0

    def column(pose):
        if pose is None:
            return np.zeros(len(corrs))
        return preference(residuals(pose, corrs.a, corrs.b), params.tau_t)

    # point preferences: one column per cluster (zero when it has no pose)
    point_pref = np.stack([column(p) for p in poses], axis=1)
    cluster_pref = np.stack([point_pref[m].min(axis=0) for m in members])
    dist = _tanimoto_matrix(cluster_pref)
    merges = 0

    while len(members) > 1:
        flat = int(np.argmin(np.triu(dist, 1) + np.tril(np.full_like(dist, np.inf))))
        i, j = divmod(flat, len(members))
        if not dist[i, j] < params.merge_stop:
            break
        merges += 1
        merged = np.sort(np.concatenate([members[i], members[j]]))
        members[i] = merged
        poses[i] = _try_fit(corrs, merged)
        del members[j], poses[j]
        owner[merged] = i
        owner[owner > j] -= 1

        point_pref[:, i] = column(poses[i])
        point_pref = np.delete(point_pref, j, axis=1)
        cluster_pref = np.delete(cluster_pref, j, axis=0)
        cluster_pref = np.delete(cluster_pref, j, axis=1)
        new_col = np.full(len(members), np.inf)
        np.minimum.at(new_col, owner[inside], point_pref[inside, i])
        cluster_pref[:, i] = new_col
        cluster_pref[i] = point_pref[merged].min(axis=0)

        dist = _tanimoto_matrix(cluster_pref)

    keep = [(m, p) for m, p in zip(members, poses) if p is not None and len(m) >= 3]
    est = _estimate(corrs, [m for m, _ in keep], [p for _, p in keep])
    est.iterations_run = merges
    return est
