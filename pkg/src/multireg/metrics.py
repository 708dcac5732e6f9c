"""Segmentation and registration metrics.

Estimated clusters ``H_j`` are matched to the ground-truth cluster ``G_k``
sharing the most points (ties go to the smaller ground-truth id). Points
labelled -1 belong to no cluster on either side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySet, NoClusters
from .geometry import OUTLIER, CorrespondenceSet, RigidTransform, angular_distance, cluster_ids


def contingency(est, gt):
    """Intersection counts ``|H_j ∩ G_k|``.

    Returns ``(table, est_ids, gt_ids)`` with ``table[j, k]`` counting points
    labelled ``est_ids[j]`` in the estimate and ``gt_ids[k]`` in the ground truth.
    """
    est = np.asarray(est)
    gt = np.asarray(gt)
    if est.shape != gt.shape:
        raise ValueError(f"labelings differ in length: {len(est)} vs {len(gt)}")
    est_ids = cluster_ids(est)
    gt_ids = cluster_ids(gt)
    both = (est != OUTLIER) & (gt != OUTLIER)
    ei = np.searchsorted(est_ids, est[both])
    gi = np.searchsorted(gt_ids, gt[both])
    table = np.zeros((len(est_ids), len(gt_ids)), dtype=np.int64)
    np.add.at(table, (ei, gi), 1)
    return table, est_ids, gt_ids


def _matched(est, gt):
    table, est_ids, gt_ids = contingency(est, gt)
    if len(est_ids) == 0:
        raise NoClusters("estimate has no clusters")
    if len(gt_ids) == 0:
        raise NoClusters("ground truth has no clusters")
    return table, est_ids, gt_ids, np.argmax(table, axis=1)


def match_clusters(est, gt) -> dict[int, int]:
    """Map every estimated cluster id to the ground-truth id it overlaps most."""
    table, est_ids, gt_ids = contingency(est, gt)
    if len(gt_ids) == 0:
        return {}
    best = np.argmax(table, axis=1)
    return {int(e): int(gt_ids[b]) for e, b in zip(est_ids, best)}


def iou(est, gt) -> float:
    """Mean over estimated clusters of ``|H ∩ G| / |H ∪ G|`` with its matched ``G``."""
    est = np.asarray(est)
    gt = np.asarray(gt)
    table, est_ids, gt_ids, best = _matched(est, gt)
    size_h = np.array([np.count_nonzero(est == e) for e in est_ids])
    size_g = np.array([np.count_nonzero(gt == g) for g in gt_ids])
    inter = table[np.arange(len(est_ids)), best]
    return float(np.mean(inter / (size_h + size_g[best] - inter)))


def chamfer(p, q) -> float:
    """Symmetric Chamfer distance: half the sum of both mean nearest-neighbour distances."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(q) == 0:
        raise EmptySet("Chamfer distance needs two non-empty point sets")
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return 0.5 * (float(np.mean(d_pq)) + float(np.mean(d_qp)))


def per_point_error(
    a,
    gt_labels,
    gt_poses: dict[int, RigidTransform],
    est_labels,
    est_poses: dict[int, RigidTransform],
) -> float:
    """Mean Chamfer distance between each estimated object moved by its estimated
    pose and its matched ground-truth object moved by the true pose."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    gt_labels = np.asarray(gt_labels)
    est_labels = np.asarray(est_labels)
    _, est_ids, gt_ids, best = _matched(est_labels, gt_labels)
    errs = []
    for e, b in zip(est_ids, best):
        g = gt_ids[b]
        moved_est = est_poses[int(e)].apply(a[est_labels == e])
        moved_gt = gt_poses[int(g)].apply(a[gt_labels == g])
        errs.append(chamfer(moved_est, moved_gt))
    return float(np.mean(errs))


def pose_weights(est, gt):
    """``(est_id, gt_id, |H ∩ G| / |H|)`` for every intersecting pair."""
    est = np.asarray(est)
    table, est_ids, gt_ids = contingency(est, gt)
    out = []
    for j, e in enumerate(est_ids):
        size_h = np.count_nonzero(est == e)
        for k in np.nonzero(table[j])[0]:
            out.append((int(e), int(gt_ids[k]), table[j, k] / size_h))
    return out


def pose_errors(gt_labels, gt_poses, est_labels, est_poses) -> tuple[float, float]:
    """Intersection-weighted rotation (rad) and translation (m) errors, averaged over
    estimated clusters."""
    est_ids = cluster_ids(est_labels)
    if len(est_ids) == 0 or len(cluster_ids(gt_labels)) == 0:
        raise NoClusters("need clusters on both sides")
    rot = dict.fromkeys(est_ids.tolist(), 0.0)
    trans = dict.fromkeys(est_ids.tolist(), 0.0)
    for e, g, w in pose_weights(est_labels, gt_labels):
        pe, pg = est_poses[e], gt_poses[g]
        rot[e] += w * angular_distance(pe.rotation, pg.rotation)
        trans[e] += w * float(np.linalg.norm(pe.translation - pg.translation))
    return float(np.mean(list(rot.values()))), float(np.mean(list(trans.values())))


@dataclass
class MetricsReport:
    iou: float
    per_point_error: float
    rotation_error: float
    translation_error: float
    matched_pairs: list = field(default_factory=list)
    num_clusters: int = 0
    outlier_precision: float | None = None
    outlier_recall: float | None = None

    def to_dict(self) -> dict:
        return {
            "iou": self.iou,
            "per_point_error": self.per_point_error,
            "rotation_error": self.rotation_error,
            "translation_error": self.translation_error,
            "num_clusters": self.num_clusters,
            "matched_pairs": [
                {"est": e, "gt": g, "weight": float(w)} for e, g, w in self.matched_pairs
            ],
            "outlier_precision": self.outlier_precision,
            "outlier_recall": self.outlier_recall,
        }


def evaluate(corrs: CorrespondenceSet, est_labels, est_poses) -> MetricsReport:
    """Score an estimate against the ground truth carried by ``corrs``."""
    if corrs.gt_labels is None or corrs.gt_poses is None:
        raise ValueError("correspondences carry no ground truth")
    est_labels = np.asarray(est_labels)
    if len(est_labels) != len(corrs):
        raise ValueError(f"estimate has {len(est_labels)} labels for {len(corrs)} correspondences")
    gt = corrs.gt_labels
    est_out = est_labels == OUTLIER
    gt_out = gt == OUTLIER
    tp = np.count_nonzero(est_out & gt_out)
    rot, trans = pose_errors(gt, corrs.gt_poses, est_labels, est_poses)
    return MetricsReport(
        iou=iou(est_labels, gt),
        per_point_error=per_point_error(corrs.a, gt, corrs.gt_poses, est_labels, est_poses),
        rotation_error=rot,
        translation_error=trans,
        matched_pairs=pose_weights(est_labels, gt),
        num_clusters=int(len(cluster_ids(est_labels))),
        outlier_precision=float(tp / est_out.sum()) if est_out.any() else None,
        outlier_recall=float(tp / gt_out.sum()) if gt_out.any() else None,
    )
