import numpy as np
import pytest

from tubelab import geometry as geo
from tubelab import measures as ms

I3 = np.eye(3)


def make_tube(center, direction, delta, length=1.0, role="tube"):
    frame = geo.frame_from_axis(direction)
    return geo.make_box(center, frame, [delta, delta, length], role=role)


def axis_tube(center, delta, length=1.0):
    """Tube along z with the standard frame (kept binary-aligned in tests)."""
    return geo.make_box(center, I3, [delta, delta, length], role="tube")


@pytest.fixture(scope="session")
def grid16():
    """Default working grid for delta = 1/16 (h = delta/2)."""
    return ms.VoxelGrid.cube(1.0, h=1 / 32)


@pytest.fixture(scope="session")
def grid8():
    """Default working grid for delta = 1/8."""
    return ms.VoxelGrid.cube(1.0, h=1 / 16)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260816)
