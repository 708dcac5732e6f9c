"""Synthetic multi-object scenes.

Object clouds (procedural shapes or point files) are laid out in the source
frame, each object gets a random rigid motion (objects in a shared-motion
group get the same one), Gaussian noise is added to the moved points and
optional uniform outlier pairs are appended.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FileError, ParseError
from .geometry import OUTLIER, CorrespondenceSet, RigidTransform, random_rotation
from .io import load_point_cloud

SHAPES = ("box", "sphere", "cylinder", "lbracket")


def _box(rng, n, size):
    h = size / (2.0 * np.sqrt(3.0))
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-h, h, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -h, h)
    for ax in range(3):
        m = axis == ax
        others = [c for c in range(3) if c != ax]
        pts[m, ax] = sign[m]
        pts[np.ix_(m, others)] = uv[m]
    return pts


def _sphere(rng, n, size):
    v = rng.normal(size=(n, 3))
    return 0.5 * size * v / np.linalg.norm(v, axis=1, keepdims=True)


def _cylinder(rng, n, size):
    r = size / (2.0 * np.sqrt(2.0))
    h = r
    side = 2 * np.pi * r * 2 * h
    cap = np.pi * r * r
    which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, n)
    pts = np.empty((n, 3))
    rad = np.where(which == 0, r, r * np.sqrt(rng.random(n)))
    pts[:, 0] = rad * np.cos(theta)
    pts[:, 1] = rad * np.sin(theta)
    pts[:, 2] = np.where(which == 0, rng.uniform(-h, h, n), np.where(which == 1, -h, h))
    return pts


def _lbracket(rng, n, size):
    s = size / (2.0 * np.sqrt(3.0))
    thick = 0.25 * s
    pts = rng.uniform(-s, s, (n, 3))
    second = rng.random(n) < 0.5
    pts[~second, 1] = -s + thick * (pts[~second, 1] + s) / (2 * s)
    pts[second, 0] = -s + thick * (pts[second, 0] + s) / (2 * s)
    return pts


_GENERATORS = {"box": _box, "sphere": _sphere, "cylinder": _cylinder, "lbracket": _lbracket}


def procedural_shape(shape: str, n: int, size: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` points sampled from a shape centred at the origin.

    Every point lies within ``size / 2`` of the origin, so ``size`` bounds the
    object's diameter.
    """
    if shape not in _GENERATORS:
        raise ValueError(f"unknown shape {shape!r}; choose from {', '.join(SHAPES)}")
    return _GENERATORS[shape](rng, n, size)


@dataclass
class ObjectSpec:
    shape: str | None = "box"
    points: int = 300
    size: float = 3.0
    path: str | None = None
    center: tuple[float, float, float] | None = None


@dataclass
class SceneSpec:
    """Recipe for one synthetic scene.

    Objects without an explicit ``center`` are placed on a three-column grid
    in the xy-plane with ``spacing`` metres between neighbours. Translations
    are drawn uniformly from ``[-translation_box, translation_box]^3``.
    """

    objects: list[ObjectSpec] = field(default_factory=list)
    noise_sigma: float = 0.0
    shared_motion_groups: list[list[int]] = field(default_factory=list)
    outlier_fraction: float = 0.0
    translation_box: float = 5.0
    spacing: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if not self.objects:
            raise ValueError("objects: at least one object is required")
        for i, o in enumerate(self.objects):
            if o.points < 4:
                raise ValueError(f"objects[{i}].points: must be at least 4")
            if o.path is None and o.shape not in SHAPES:
                raise ValueError(f"objects[{i}].shape: unknown shape {o.shape!r}")
            if not o.size > 0:
                raise ValueError(f"objects[{i}].size: must be positive")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma: must be non-negative")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction: must lie in [0, 1)")
        if not self.translation_box >= 0:
            raise ValueError("translation_box: must be non-negative")
        seen = set()
        for g in self.shared_motion_groups:
            for i in g:
                if not 0 <= i < len(self.objects):
                    raise ValueError(f"shared_motion_groups: object index {i} out of range")
                if i in seen:
                    raise ValueError(f"shared_motion_groups: object {i} is in two groups")
                seen.add(i)

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        """Build from parsed JSON, raising ``ValueError`` that names the bad field."""
        if not isinstance(d, dict):
            raise ValueError("scene spec: expected a JSON object")
        known = {"objects", "noise_sigma", "shared_motion_groups", "outlier_fraction",
                 "translation_box", "spacing", "seed"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"{sorted(extra)[0]}: unknown field")
        if "objects" not in d or not isinstance(d["objects"], list):
            raise ValueError("objects: required list")
        objs = []
        for i, o in enumerate(d["objects"]):
            if not isinstance(o, dict):
                raise ValueError(f"objects[{i}]: expected an object")
            bad = set(o) - {"shape", "points", "size", "path", "center"}
            if bad:
                raise ValueError(f"objects[{i}].{sorted(bad)[0]}: unknown field")
            try:
                center = o.get("center")
                if center is not None:
                    center = tuple(float(c) for c in center)
                    if len(center) != 3:
                        raise ValueError
                obj = ObjectSpec(
                    shape=o.get("shape", None if "path" in o else "box"),
                    points=int(o.get("points", 300)),
                    size=float(o.get("size", 3.0)),
                    path=o.get("path"),
                    center=center,
                )
            except (TypeError, ValueError):
                raise ValueError(f"objects[{i}]: malformed entry") from None
            objs.append(obj)
        try:
            spec = cls(
                objects=objs,
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                shared_motion_groups=[[int(i) for i in g] for g in d.get("shared_motion_groups", [])],
                outlier_fraction=float(d.get("outlier_fraction", 0.0)),
                translation_box=float(d.get("translation_box", 5.0)),
                spacing=float(d.get("spacing", 4.0)),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"scene spec: malformed value ({exc})") from None
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "objects": [
                {k: v for k, v in (("shape", o.shape), ("points", o.points), ("size", o.size),
                                   ("path", o.path), ("center", list(o.center) if o.center else None))
                 if v is not None}
                for o in self.objects
            ],
            "noise_sigma": self.noise_sigma,
            "shared_motion_groups": [list(g) for g in self.shared_motion_groups],
            "outlier_fraction": self.outlier_fraction,
            "translation_box": self.translation_box,
            "spacing": self.spacing,
            "seed": self.seed,
        }


def _object_points(obj: ObjectSpec, index: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 1, index])
    if obj.path is None:
        return procedural_shape(obj.shape, obj.points, obj.size, rng)
    try:
        pts = load_point_cloud(obj.path)
    except OSError as exc:
        raise FileError(f"cannot read object source {obj.path}: {exc}") from exc
    except ParseError as exc:
        raise FileError(f"cannot parse object source {obj.path}: {exc}") from exc
    if len(pts) > obj.points:
        pts = pts[np.sort(rng.choice(len(pts), obj.points, replace=False))]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return pts - 0.5 * (lo + hi)


def grid_center(index: int, spacing: float) -> np.ndarray:
    return np.array([(index % 3) * spacing, (index // 3) * spacing, 0.0])


def generate_scene(spec: SceneSpec) -> CorrespondenceSet:
    """Sample a scene; the result carries ground-truth labels and poses.

    Label ``k`` is object ``k``; appended outlier pairs carry label -1.
    Output is a pure function of ``spec`` (including its seed).
    """
    spec.validate()
    pose_rng = np.random.default_rng([spec.seed, 2])
    group_of = {}
    for gi, g in enumerate(spec.shared_motion_groups):
        for i in g:
            group_of[i] = gi
    group_pose = {}
    poses = {}
    for k in range(len(spec.objects)):
        pose = RigidTransform(
            random_rotation(pose_rng),
            pose_rng.uniform(-spec.translation_box, spec.translation_box, 3),
        )
        if k in group_of:
            pose = group_pose.setdefault(group_of[k], pose)
        poses[k] = pose

    a_parts, b_parts, lab_parts = [], [], []
    for k, obj in enumerate(spec.objects):
        pts = _object_points(obj, k, spec.seed)
        center = np.asarray(obj.center) if obj.center is not None else grid_center(k, spec.spacing)
        a_k = pts + center
        a_parts.append(a_k)
        b_parts.append(poses[k].apply(a_k))
        lab_parts.append(np.full(len(a_k), k, dtype=np.int64))
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    labels = np.concatenate(lab_parts)

    if spec.noise_sigma > 0:
        b = b + np.random.default_rng([spec.seed, 3]).normal(0.0, spec.noise_sigma, b.shape)

    n_out = int(np.floor(spec.outlier_fraction * len(a)))
    if n_out:
        rng = np.random.default_rng([spec.seed, 4])
        oa = rng.uniform(a.min(axis=0), a.max(axis=0), (n_out, 3))
        ob = rng.uniform(b.min(axis=0), b.max(axis=0), (n_out, 3))
        a = np.concatenate([a, oa])
        b = np.concatenate([b, ob])
        labels = np.concatenate([labels, np.full(n_out, OUTLIER, dtype=np.int64)])

    return CorrespondenceSet(a, b, labels, poses)


_PRESET_SHAPES = ("box", "sphere", "cylinder", "lbracket", "box", "cylinder", "sphere")


def experiment_spec(
    experiment: int,
    seed: int = 0,
    points_per_object: int = 300,
    object_size: float = 1.2,
    noise_sigma: float | None = None,
) -> SceneSpec:
    """Seven-object scene in the style of the three synthetic experiments.

    1: noiseless; 2: noise 0.03 m on the target cloud; 3: as 2 with objects 0
    and 2 (8 m apart) sharing one motion.
    """
    if experiment not in (1, 2, 3):
        raise ValueError("experiment must be 1, 2 or 3")
    if noise_sigma is None:
        noise_sigma = 0.0 if experiment == 1 else 0.03
    return SceneSpec(
        objects=[ObjectSpec(shape=s, points=points_per_object, size=object_size) for s in _PRESET_SHAPES],
        noise_sigma=noise_sigma,
        shared_motion_groups=[[0, 2]] if experiment == 3 else [],
        seed=seed,
    )
