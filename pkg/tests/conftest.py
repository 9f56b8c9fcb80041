import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lpstereo.mesh import TriangleMesh
from lpstereo.similarity import ScalarImage


@pytest.fixture
def single_triangle():
    return TriangleMesh(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [[0, 1, 2]],
    )


@pytest.fixture
def unit_cube():
    from lpstereo.synth import make_cube

    mesh, creases = make_cube(1)
    return mesh, creases


def random_texture(size=16, seed=0, lo=0.1, hi=0.9):
    rng = np.random.default_rng(seed)
    return ScalarImage(rng.uniform(lo, hi, (size, size)))


@pytest.fixture
def texture_pair():
    return random_texture(16, seed=3), random_texture(16, seed=4)
