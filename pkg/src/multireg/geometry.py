"""Rigid transforms, correspondence containers and labeling helpers.

Points are stored as ``(n, 3)`` float64 arrays and rotations as 3x3 matrices.
A labeling is a plain integer array with ``OUTLIER`` (-1) marking points that
belong to no cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OUTLIER = -1

_ORTHO_TOL = 1e-9
_REPAIR_TOL = 1e-6


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.array(r, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    drift = max(np.abs(r.T @ r - np.eye(3)).max(), abs(np.linalg.det(r) - 1.0))
    if drift <= _ORTHO_TOL:
        return r
    if drift < _REPAIR_TOL:
        return nearest_rotation(r)
    raise ValueError(f"matrix is not a rotation (orthonormality drift {drift:.3g})")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: ``p -> R p + t``.

    Matrices that drift from orthonormality by less than 1e-6 are projected
    back onto SO(3); anything further off raises ``ValueError``.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite entries")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(n, 3)``."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        """Row-major rotation (9 values) followed by translation (3 values)."""
        return [float(v) for v in self.rotation.ravel()] + [float(v) for v in self.translation]

    @classmethod
    def from_list(cls, values) -> RigidTransform:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValueError(f"expected 12 pose values, got {values.size}")
        return cls(values[:9].reshape(3, 3), values[9:])

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


def apply(t: RigidTransform, p: np.ndarray) -> np.ndarray:
    return t.apply(p)


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    return t1.compose(t2)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def residuals(t: RigidTransform, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pair misfit ``||b_i - (R a_i + t)||``."""
    diff = np.asarray(b, dtype=np.float64) - t.apply(a)
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


def residual(t: RigidTransform, a, b) -> float:
    return float(residuals(t, np.reshape(a, (1, 3)), np.reshape(b, (1, 3)))[0])


def angular_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between two rotations, in ``[0, pi]``."""
    rel = np.asarray(r1).T @ np.asarray(r2)
    # atan2 of (2 sin, 2 cos) stays accurate near 0 and pi, unlike arccos
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    return float(np.arctan2(np.linalg.norm(axis), np.trace(rel) - 1.0))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from SO(3) via a uniform unit quaternion (Shoemake)."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            np.sqrt(u1) * np.cos(2 * np.pi * u3),
            np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
            np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
            np.sqrt(u1) * np.sin(2 * np.pi * u3),
        ]
    )
    return quaternion_to_rotation(q)


@dataclass
class CorrespondenceSet:
    """Paired points ``a[i] <-> b[i]`` with optional ground truth.

    ``gt_poses`` maps each non-outlier ground-truth label to its motion.
    """

    a: np.ndarray
    b: np.ndarray
    gt_labels: np.ndarray | None = None
    gt_poses: dict[int, RigidTransform] | None = None

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.float64).reshape(-1, 3)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(-1, 3)
        if self.a.shape != self.b.shape:
            raise ValueError(f"a and b differ in length: {len(self.a)} vs {len(self.b)}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("correspondences contain non-finite coordinates")
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int64).reshape(-1)
            if len(self.gt_labels) != len(self.a):
                raise ValueError("gt_labels length does not match correspondence count")
            if self.gt_poses is not None:
                missing = set(np.unique(self.gt_labels[self.gt_labels != OUTLIER]).tolist())
                missing -= set(self.gt_poses)
                if missing:
                    raise ValueError(f"no ground-truth pose for labels {sorted(missing)}")

    def __len__(self):
        return len(self.a)


def compact_labels(labels, order: str = "sorted") -> np.ndarray:
    """Renumber non-outlier labels to ``0..K-1``.

    ``order="sorted"`` keeps the relative order of the original ids;
    ``order="first"`` numbers clusters by first occurrence in the array.
    """
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(labels.shape, OUTLIER, dtype=np.int64)
    mask = labels != OUTLIER
    if not mask.any():
        return out
    if order == "sorted":
        uniq, inv = np.unique(labels[mask], return_inverse=True)
        out[mask] = inv
    elif order == "first":
        uniq, first = np.unique(labels[mask], return_index=True)
        rank = np.empty(len(uniq), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
        out[mask] = rank[np.searchsorted(uniq, labels[mask])]
    else:
        raise ValueError(f"unknown order {order!r}")
    return out


def cluster_ids(labels) -> np.ndarray:
    """Sorted non-outlier label values present in ``labels``."""
    labels = np.asarray(labels)
    return np.unique(labels[labels != OUTLIER])
