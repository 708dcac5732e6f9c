import json

import numpy as np
import pytest

from multireg.errors import CoverageError, FileError, ParseError
from multireg.geometry import OUTLIER, CorrespondenceSet, residuals
from multireg.io import (
    load_correspondences,
    load_point_cloud,
    load_poses,
    save_correspondences,
    save_point_cloud_ply,
    save_poses,
)
from multireg.scenegen import ObjectSpec, SceneSpec, experiment_spec, generate_scene, procedural_shape


def max_gt_residual(corrs):
    worst = 0.0
    for k, pose in corrs.gt_poses.items():
        m = corrs.gt_labels == k
        worst = max(worst, residuals(pose, corrs.a[m], corrs.b[m]).max())
    return worst


# --- generate_scene --------------------------------------------------------------

def test_noiseless_scene_has_zero_residuals():
    corrs = generate_scene(experiment_spec(1, seed=0))
    assert len(corrs) == 7 * 300
    assert max_gt_residual(corrs) <= 1e-12


def test_same_seed_bit_identical():
    s = experiment_spec(2, seed=42)
    c1, c2 = generate_scene(s), generate_scene(s)
    assert np.array_equal(c1.a, c2.a) and np.array_equal(c1.b, c2.b)
    assert np.array_equal(c1.gt_labels, c2.gt_labels)
    assert not np.array_equal(c1.b, generate_scene(experiment_spec(2, seed=43)).b)


def test_shared_motion_group():
    spec = SceneSpec(objects=[ObjectSpec(points=20), ObjectSpec(points=20), ObjectSpec(points=20)],
                     shared_motion_groups=[[0, 1]], seed=3)
    corrs = generate_scene(spec)
    assert corrs.gt_poses[0] == corrs.gt_poses[1]
    assert not corrs.gt_poses[0] == corrs.gt_poses[2]


def test_experiment_three_shares_distant_pair():
    corrs = generate_scene(experiment_spec(3, seed=1))
    assert corrs.gt_poses[0] == corrs.gt_poses[2]
    gap = np.linalg.norm(corrs.a[corrs.gt_labels == 0].mean(0) - corrs.a[corrs.gt_labels == 2].mean(0))
    assert gap >= 5 * 1.5


def test_noise_level():
    spec = SceneSpec(objects=[ObjectSpec(points=12000)], noise_sigma=0.03, seed=5)
    corrs = generate_scene(spec)
    r = corrs.b - corrs.gt_poses[0].apply(corrs.a)
    assert np.all(np.abs(r.std(axis=0) / 0.03 - 1.0) < 0.05)


def test_outliers_appended():
    spec = SceneSpec(objects=[ObjectSpec(points=100)], outlier_fraction=0.25, seed=1)
    corrs = generate_scene(spec)
    assert len(corrs) == 125
    assert (corrs.gt_labels[100:] == OUTLIER).all()


@pytest.mark.parametrize("shape", ["box", "sphere", "cylinder", "lbracket"])
def test_procedural_shapes_fit_diameter(shape):
    pts = procedural_shape(shape, 500, 3.0, np.random.default_rng(0))
    assert pts.shape == (500, 3)
    assert np.linalg.norm(pts, axis=1).max() <= 1.5 + 1e-12


def test_spec_validation_names_field():
    with pytest.raises(ValueError, match="noise_sigma"):
        SceneSpec.from_dict({"objects": [{"shape": "box"}], "noise_sigma": -1})
    with pytest.raises(ValueError, match=r"objects\[0\].points"):
        SceneSpec.from_dict({"objects": [{"shape": "box", "points": 3}]})
    with pytest.raises(ValueError, match="outlier_fraction"):
        SceneSpec.from_dict({"objects": [{}], "outlier_fraction": 1.0})
    with pytest.raises(ValueError, match="colour"):
        SceneSpec.from_dict({"objects": [{}], "colour": "red"})
    with pytest.raises(ValueError, match="shared_motion_groups"):
        SceneSpec.from_dict({"objects": [{}], "shared_motion_groups": [[0, 3]]})


def test_spec_dict_round_trip():
    spec = experiment_spec(3, seed=9)
    again = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec


def test_object_from_file(tmp_path):
    pts = np.random.default_rng(0).uniform(0, 1, (50, 3))
    path = tmp_path / "obj.ply"
    save_point_cloud_ply(path, pts)
    spec = SceneSpec(objects=[ObjectSpec(shape=None, path=str(path), points=30)], seed=2)
    corrs = generate_scene(spec)
    assert len(corrs) == 30
    assert max_gt_residual(corrs) <= 1e-12


def test_missing_object_file(tmp_path):
    spec = SceneSpec(objects=[ObjectSpec(shape=None, path=str(tmp_path / "nope.ply"))])
    with pytest.raises(FileError):
        generate_scene(spec)


# --- point clouds --------------------------------------------------------------

PLY3 = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
property uchar red
end_header
0 0 0 255
1 2 3 0
-1.5 0.25 4e-3 7
"""


def test_ply_three_vertices(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(PLY3)
    assert load_point_cloud(p).tolist() == [[0, 0, 0], [1, 2, 3], [-1.5, 0.25, 0.004]]


def test_ply_truncated(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(PLY3.replace("element vertex 3", "element vertex 5"))
    with pytest.raises(ParseError, match="line 13"):
        load_point_cloud(p)


def test_ply_binary_rejected(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(PLY3.replace("ascii", "binary_little_endian"))
    with pytest.raises(ParseError, match="line 2"):
        load_point_cloud(p)


def test_csv_cloud(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,z\n1.5,2,3\n")
    assert load_point_cloud(p).tolist() == [[1.5, 2.0, 3.0]]
    p.write_text("x,y,z\n1,2\n")
    with pytest.raises(ParseError, match="line 2"):
        load_point_cloud(p)


def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(1).normal(size=(20, 3))
    save_point_cloud_ply(tmp_path / "r.ply", pts)
    assert np.array_equal(load_point_cloud(tmp_path / "r.ply"), pts)


# --- correspondences ------------------------------------------------------------

def test_correspondence_round_trip(tmp_path):
    corrs = generate_scene(experiment_spec(2, seed=1, points_per_object=30))
    save_correspondences(tmp_path / "c.csv", corrs)
    save_poses(tmp_path / "c.gt.json", corrs.gt_poses, sigma=0.03)
    back = load_correspondences(tmp_path / "c.csv", tmp_path / "c.gt.json")
    assert np.abs(back.a - corrs.a).max() <= 1e-12
    assert np.abs(back.b - corrs.b).max() <= 1e-12
    assert np.array_equal(back.gt_labels, corrs.gt_labels)
    assert all(back.gt_poses[k] == corrs.gt_poses[k] for k in corrs.gt_poses)
    assert json.loads((tmp_path / "c.gt.json").read_text())["sigma"] == 0.03


def test_correspondences_without_labels(tmp_path):
    a = np.random.default_rng(0).normal(size=(5, 3))
    save_correspondences(tmp_path / "c.csv", CorrespondenceSet(a, a + 1))
    back = load_correspondences(tmp_path / "c.csv")
    assert back.gt_labels is None


def test_scene_flow_style_input(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 3))
    flow = rng.normal(size=(4, 3))
    rows = "\n".join(",".join(repr(float(v)) for v in np.concatenate([p, p + f])) for p, f in zip(a, flow))
    (tmp_path / "f.csv").write_text(rows + "\n")
    back = load_correspondences(tmp_path / "f.csv")
    assert np.array_equal(back.b, a + flow)


def test_correspondence_parse_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("ax,ay,az,bx,by,bz\n1,2,3,4,5\n")
    with pytest.raises(ParseError, match="line 2"):
        load_correspondences(p)
    p.write_text("ax,ay,az,bx,by,bz,gt_label\n1,2,3,4,5,6,0\n1,2,3,4,5,6\n")
    with pytest.raises(CoverageError):
        load_correspondences(p)
    p.write_text("ax,ay,az,bx,by,bz\n1,2,3,4,5,six\n")
    with pytest.raises(ParseError):
        load_correspondences(p)


def test_poses_file(tmp_path):
    corrs = generate_scene(experiment_spec(1, seed=2, points_per_object=10))
    save_poses(tmp_path / "p.json", corrs.gt_poses)
    doc = json.loads((tmp_path / "p.json").read_text())
    assert len(doc["poses"][0]["pose"]) == 12
    assert load_poses(tmp_path / "p.json") == corrs.gt_poses
