import sys

import numpy as np
import pytest

from multireg.geometry import CorrespondenceSet, RigidTransform, random_rotation


def make_pose(rng, box=5.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-box, box, 3))


def blob(rng, n, center, radius=0.5):
    return rng.uniform(-radius, radius, (n, 3)) + np.asarray(center, dtype=float)


def two_object_scene(seed=0, n=60, gap=10.0, same_motion=False, noise=0.0):
    """Two cubes of points ``gap`` metres apart, each with its own motion."""
    rng = np.random.default_rng(seed)
    a = np.concatenate([blob(rng, n, [0, 0, 0]), blob(rng, n, [gap, 0, 0])])
    p0 = make_pose(rng)
    p1 = p0 if same_motion else make_pose(rng)
    b = np.concatenate([p0.apply(a[:n]), p1.apply(a[n:])])
    b = b + rng.normal(0.0, noise, b.shape) if noise else b
    labels = np.repeat([0, 1], n)
    return CorrespondenceSet(a, b, labels, {0: p0, 1: p1})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
