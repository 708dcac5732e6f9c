"""Initial clusterings: radius-connectivity (Euclidean) clustering tuned to a
target count, and externally supplied labels."""
from __future__ import annotations

import itertools
import warnings

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import TargetUnreachable
from .geometry import compact_labels
from .io import load_labels  # noqa: F401  re-exported as part of the init API

MAX_BISECTIONS = 40
# above this many neighbour pairs, connectivity is computed cell by cell
PAIR_BUDGET = 4_000_000


def _components_from_pairs(n, pairs):
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)[1]


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _components_by_cells(points, radius):
    """Exact radius connectivity for large radii.

    Cells of side ``radius / sqrt(3)`` have diameter ``radius``, so each cell
    is connected internally; cells up to two steps apart are joined when their
    closest pair is within ``radius``.
    """
    side = radius / np.sqrt(3.0)
    keys = np.floor((points - points.min(axis=0)) / side).astype(np.int64)
    cells, cell_of = np.unique(keys, axis=0, return_inverse=True)
    cell_of = cell_of.reshape(-1)
    order = np.argsort(cell_of, kind="stable")
    starts = np.searchsorted(cell_of[order], np.arange(len(cells) + 1))
    index = {tuple(c): i for i, c in enumerate(cells.tolist())}
    trees = {}

    def tree(i):
        if i not in trees:
            trees[i] = cKDTree(points[order[starts[i]:starts[i + 1]]])
        return trees[i]

    offsets = [o for o in itertools.product(range(-2, 3), repeat=3) if o > (0, 0, 0)]
    parent = list(range(len(cells)))
    bound = np.nextafter(radius, np.inf)
    for i, c in enumerate(cells.tolist()):
        for o in offsets:
            j = index.get((c[0] + o[0], c[1] + o[1], c[2] + o[2]))
            if j is None:
                continue
            ri, rj = _find(parent, i), _find(parent, j)
            if ri == rj:
                continue
            small, big = (i, j) if starts[i + 1] - starts[i] <= starts[j + 1] - starts[j] else (j, i)
            d, _ = tree(big).query(points[order[starts[small]:starts[small + 1]]], k=1, distance_upper_bound=bound)
            if np.any(d <= radius):
                parent[ri] = rj
    roots = np.array([_find(parent, i) for i in range(len(cells))])
    return roots[cell_of]


def radius_components(points, radius: float, tree=None) -> np.ndarray:
    """Connected components of the graph joining points at distance <= ``radius``.

    Labels are numbered by first occurrence, so they do not depend on the
    traversal order of the graph library.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if tree is None:
        tree = cKDTree(points)
    if radius > 0 and tree.count_neighbors(tree, radius) > 2 * PAIR_BUDGET + n:
        labels = _components_by_cells(points, radius)
    else:
        labels = _components_from_pairs(n, tree.query_pairs(radius, output_type="ndarray"))
    return compact_labels(labels, order="first")


def euclidean_clusters(points, target_count: int, return_radius: bool = False):
    """Euclidean clustering with the radius tuned towards ``target_count`` clusters.

    Radius zero is tried first; otherwise the radius is bracketed by doubling
    from the typical nearest-neighbour spacing (never beyond the bounding-box
    diagonal), then bisected until the count is within 10% of the target,
    40 evaluations in all. The closest
    labeling seen is returned; a :class:`TargetUnreachable` warning is issued
    when it is still more than 50% away from the target.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise ValueError("no points to cluster")
    if not 1 <= target_count <= n:
        raise ValueError(f"target_count must be in [1, {n}], got {target_count}")

    tree = cKDTree(points)
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    best = None
    evals = 0

    def probe(r):
        nonlocal best, evals
        evals += 1
        labels = radius_components(points, r, tree)
        k = int(labels.max()) + 1
        gap = abs(k - target_count)
        if best is None or gap < best[0] or (gap == best[0] and r < best[2]):
            best = (gap, labels, r)
        return k

    lo, hi = 0.0, diag
    # r = 0 separates every distinct point; it settles targets near n outright
    k0 = probe(0.0)
    if abs(k0 - target_count) <= 0.1 * target_count or k0 < target_count:
        lo = hi = 0.0
    elif n > 1 and diag > 0:
        nn, _ = tree.query(points, k=2)
        spacing = nn[:, 1][nn[:, 1] > 0]
        r = float(np.median(spacing)) if len(spacing) else diag
        while r < diag and evals < MAX_BISECTIONS:
            k = probe(r)
            if abs(k - target_count) <= 0.1 * target_count:
                lo = hi = r
                break
            if k > target_count:
                lo = r
                r *= 2.0
            else:
                hi = r
                break
    while hi - lo > 0 and evals < MAX_BISECTIONS:
        r = 0.5 * (lo + hi)
        k = probe(r)
        if abs(k - target_count) <= 0.1 * target_count:
            break
        if k > target_count:
            lo = r
        else:
            hi = r
    if best[0] > 0.1 * target_count and evals < MAX_BISECTIONS:
        probe(diag)

    gap, labels, r = best
    if gap > 0.5 * target_count:
        warnings.warn(
            f"Euclidean clustering reached {int(labels.max()) + 1} clusters for target {target_count}",
            TargetUnreachable,
            stacklevel=2,
        )
    return (labels, r) if return_radius else labels
