"""Plain-text file formats: label CSVs, point clouds (ASCII PLY / CSV),
correspondence CSVs and ground-truth pose sidecars."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import CoverageError, ParseError
from .geometry import CorrespondenceSet, RigidTransform

CORR_COLUMNS = ["ax", "ay", "az", "bx", "by", "bz"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _rows(path):
    """Yield ``(line_number, fields)`` for non-blank CSV rows."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            fields = [f.strip() for f in row]
            if not fields or all(f == "" for f in fields):
                continue
            yield lineno, fields


def load_labels(path) -> np.ndarray:
    """Read an ``index,label`` CSV (header optional) into a labeling array.

    Indices must cover ``0..n-1`` exactly once, in any order.
    """
    found = {}
    for lineno, fields in _rows(path):
        if not found and lineno == 1 and not _is_number(fields[0]):
            continue
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, got {len(fields)}", lineno)
        try:
            idx, lab = int(fields[0]), int(fields[1])
        except ValueError:
            raise ParseError(f"non-integer field in {fields!r}", lineno) from None
        if idx < 0:
            raise CoverageError(f"negative index {idx} on line {lineno}")
        if lab < -1:
            raise ParseError(f"label {lab} below the outlier sentinel -1", lineno)
        if idx in found:
            raise CoverageError(f"duplicate index {idx} on line {lineno}")
        found[idx] = lab
    n = len(found)
    if n == 0:
        raise CoverageError("label file has no rows")
    missing = sorted(set(range(n)) - set(found))
    if missing:
        raise CoverageError(f"indices missing from label file, first is {missing[0]}")
    return np.array([found[i] for i in range(n)], dtype=np.int64)


def save_labels(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(np.asarray(labels)):
            fh.write(f"{i},{int(lab)}\n")


def _load_ply(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    n_vertex = None
    props = []
    current = None
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError(f"only ASCII PLY is supported, got {' '.join(tok[1:])!r}", lineno)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", lineno)
            current = tok[1]
            if current == "vertex":
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise ParseError(f"bad vertex count {tok[2]!r}", lineno) from None
        elif tok[0] == "property":
            if current == "vertex":
                props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", lineno)
    if header_end is None:
        raise ParseError("no end_header line", len(lines))
    if n_vertex is None:
        raise ParseError("no vertex element", header_end)
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x, y, z properties", header_end) from None

    pts = np.empty((n_vertex, 3))
    body = lines[header_end:]
    for i in range(n_vertex):
        lineno = header_end + i + 1
        if i >= len(body):
            raise ParseError(f"file ends after {i} of {n_vertex} vertices", lineno)
        tok = body[i].split()
        if len(tok) < len(props):
            raise ParseError(f"expected {len(props)} values, got {len(tok)}", lineno)
        try:
            pts[i] = [float(tok[c]) for c in cols]
        except ValueError:
            raise ParseError("non-numeric vertex coordinate", lineno) from None
    return pts


def _load_xyz_csv(path) -> np.ndarray:
    pts = []
    for lineno, fields in _rows(path):
        if not pts and not _is_number(fields[0]):
            if [f.lower() for f in fields[:3]] != ["x", "y", "z"]:
                raise ParseError(f"unexpected header {fields!r}", lineno)
            continue
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            pts.append([float(f) for f in fields])
        except ValueError:
            raise ParseError("non-numeric coordinate", lineno) from None
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def load_point_cloud(path) -> np.ndarray:
    """Points from an ASCII PLY (vertex x, y, z) or an ``x,y,z`` CSV, in file order."""
    path = Path(path)
    with open(path) as fh:
        head = fh.readline().strip()
    pts = _load_ply(path) if head == "ply" else _load_xyz_csv(path)
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinate in point cloud")
    return pts


def save_point_cloud_ply(path, points) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for p in points:
            fh.write(" ".join(_fmt(v) for v in p) + "\n")


def save_correspondences(path, corrs: CorrespondenceSet) -> None:
    """Write ``ax,ay,az,bx,by,bz[,gt_label]`` with 17 significant digits."""
    labelled = corrs.gt_labels is not None
    header = CORR_COLUMNS + (["gt_label"] if labelled else [])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(corrs)):
            vals = [_fmt(v) for v in corrs.a[i]] + [_fmt(v) for v in corrs.b[i]]
            if labelled:
                vals.append(str(int(corrs.gt_labels[i])))
            fh.write(",".join(vals) + "\n")


def load_correspondences(path, poses_path=None) -> CorrespondenceSet:
    """Read a correspondence CSV; ground-truth poses come from ``poses_path`` if given.

    The header is optional. A seventh column, when present, holds ground-truth
    labels and must then be present on every row.
    """
    rows = []
    ncols = None
    for lineno, fields in _rows(path):
        if not rows and ncols is None and not _is_number(fields[0]):
            if [f.lower() for f in fields[:6]] != CORR_COLUMNS:
                raise ParseError(f"unexpected header {fields!r}", lineno)
            ncols = len(fields)
            continue
        if ncols is None:
            ncols = len(fields)
        if len(fields) not in (6, 7):
            raise ParseError(f"expected 6 or 7 fields, got {len(fields)}", lineno)
        if len(fields) != ncols:
            raise CoverageError(f"line {lineno}: gt_label column present on some rows only")
        try:
            vals = [float(f) for f in fields[:6]]
            lab = int(fields[6]) if len(fields) == 7 else None
        except ValueError:
            raise ParseError(f"non-numeric field in {fields!r}", lineno) from None
        rows.append((vals, lab))
    if not rows:
        raise ParseError("no correspondences in file")
    data = np.array([r[0] for r in rows], dtype=np.float64)
    labels = np.array([r[1] for r in rows], dtype=np.int64) if ncols == 7 else None
    poses = load_poses(poses_path) if poses_path is not None else None
    if poses is not None and labels is None:
        raise CoverageError("ground-truth poses supplied without ground-truth labels")
    return CorrespondenceSet(data[:, :3], data[:, 3:], labels, poses)


def poses_to_json(poses: dict[int, RigidTransform]) -> list[dict]:
    return [{"label": int(k), "pose": poses[k].to_list()} for k in sorted(poses)]


def poses_from_json(entries) -> dict[int, RigidTransform]:
    return {int(e["label"]): RigidTransform.from_list(e["pose"]) for e in entries}


def save_poses(path, poses: dict[int, RigidTransform], **extra) -> None:
    doc = dict(extra)
    doc["poses"] = poses_to_json(poses)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_poses(path) -> dict[int, RigidTransform]:
    with open(path) as fh:
        doc = json.load(fh)
    return poses_from_json(doc["poses"])
