import warnings

import numpy as np
import pytest

from multireg.clustering import (
    _components_by_cells,
    _components_from_pairs,
    euclidean_clusters,
    load_labels,
    radius_components,
)
from multireg.errors import CoverageError, ParseError, TargetUnreachable
from multireg.geometry import compact_labels
from scipy.spatial import cKDTree


def grid(jitter, seed=0):
    g = np.stack(np.meshgrid(np.arange(20.0), np.arange(20.0)), -1).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    g = g + rng.uniform(-jitter, jitter, g.shape)
    return np.column_stack([g, np.zeros(len(g))])


def same_partition(l1, l2):
    return np.array_equal(compact_labels(l1, "first"), compact_labels(l2, "first"))


def test_two_blobs():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(0, 0.3, (50, 3)), rng.normal(0, 0.3, (50, 3)) + [10, 0, 0]])
    labels = euclidean_clusters(pts, 2)
    assert labels.tolist() == [0] * 50 + [1] * 50


def test_singletons():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    labels = euclidean_clusters(pts, 30)
    assert sorted(labels.tolist()) == list(range(30))


@pytest.mark.parametrize("seed", range(5))
def test_jittered_grid_hits_target(seed):
    k = euclidean_clusters(grid(0.3, seed), 100).max() + 1
    assert 90 <= k <= 110


def test_exact_grid_warns():
    # every neighbour is exactly 1 apart, so the count jumps from 400 to 1
    with pytest.warns(TargetUnreachable):
        euclidean_clusters(grid(0.0), 100)


def test_permutation_invariance():
    pts = grid(0.3, 2)
    perm = np.random.default_rng(3).permutation(len(pts))
    l1 = euclidean_clusters(pts, 100)
    l2 = euclidean_clusters(pts[perm], 100)
    assert same_partition(l1[perm], l2)


def test_labels_compact_and_complete():
    pts = np.random.default_rng(4).uniform(0, 10, (300, 3))
    labels = euclidean_clusters(pts, 40)
    assert labels.min() == 0
    assert set(labels.tolist()) == set(range(labels.max() + 1))


def test_return_radius():
    pts = np.random.default_rng(5).uniform(0, 10, (200, 3))
    labels, r = euclidean_clusters(pts, 20, return_radius=True)
    assert np.array_equal(radius_components(pts, r), labels)


def test_radius_components_inclusive():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    assert radius_components(pts, 1.0).tolist() == [0, 0, 1]
    assert radius_components(pts, 0.999).tolist() == [0, 1, 2]


@pytest.mark.parametrize("radius", [0.3, 0.8, 2.0, 6.0])
def test_cell_connectivity_matches_pairs(radius):
    rng = np.random.default_rng(6)
    pts = np.vstack([rng.normal(c, 0.7, (150, 3)) for c in ([0, 0, 0], [4, 0, 0], [0, 9, 1])])
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    assert same_partition(_components_by_cells(pts, radius), _components_from_pairs(len(pts), pairs))


def test_bad_target():
    with pytest.raises(ValueError):
        euclidean_clusters(np.zeros((5, 3)), 0)
    with pytest.raises(ValueError):
        euclidean_clusters(np.zeros((5, 3)), 6)
    with pytest.raises(ValueError):
        euclidean_clusters(np.zeros((0, 3)), 1)


def test_duplicate_points_do_not_break_spacing():
    pts = np.zeros((10, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert euclidean_clusters(pts, 1).tolist() == [0] * 10


# --- label files -----------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "labels.csv"
    p.write_text(text)
    return p


def test_load_labels_all_zero(tmp_path):
    p = write(tmp_path, "".join(f"{i},0\n" for i in range(10)))
    assert load_labels(p).tolist() == [0] * 10


def test_load_labels_duplicate(tmp_path):
    p = write(tmp_path, "index,label\n0,0\n1,0\n2,1\n3,1\n3,2\n")
    with pytest.raises(CoverageError):
        load_labels(p)


def test_load_labels_verbatim_any_order(tmp_path):
    p = write(tmp_path, "index,label\n5,2\n0,0\n1,0\n2,1\n3,1\n4,-1\n")
    assert load_labels(p).tolist() == [0, 0, 1, 1, -1, 2]


def test_load_labels_missing_index(tmp_path):
    with pytest.raises(CoverageError):
        load_labels(write(tmp_path, "0,0\n2,0\n"))


def test_load_labels_malformed(tmp_path):
    with pytest.raises(ParseError, match="line 3"):
        load_labels(write(tmp_path, "index,label\n0,0\n1,x\n"))
    with pytest.raises(ParseError):
        load_labels(write(tmp_path, "0,0,0\n"))
