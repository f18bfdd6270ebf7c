import numpy as np
import pytest

from epsmodes.lattice import EDGE, FACE, Grid, ScalarField, VectorField
from epsmodes.medium import MediumProfile


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def random_scalar(grid, rng):
    return ScalarField(grid, rng.standard_normal(grid.dims))


def random_vector(grid, rng, placement=EDGE):
    return VectorField(grid, placement, rng.standard_normal((3,) + grid.dims))


def random_medium(grid, rng, lo=1.0, hi=4.0):
    eps = lo + (hi - lo) * rng.random((3,) + grid.dims)
    return MediumProfile(grid, eps, None)


def smooth_medium(grid, seed=7, lo=1.0, hi=4.0):
    """Smooth (few-Fourier-component) permittivity sampled per edge component."""
    rng = np.random.default_rng(seed)
    terms = []
    for _ in range(4):
        kvec = rng.integers(-1, 2, size=3) * 2 * np.pi / np.asarray(grid.lengths)
        terms.append((kvec, rng.uniform(0, 2 * np.pi), rng.uniform(0.2, 0.5)))
    comps = []
    for a in range(3):
        pts = grid.component_positions(EDGE, a)
        out = np.zeros(pts.shape[:-1])
        for kvec, phase, amp in terms:
            out += amp * np.cos(pts @ kvec + phase)
        comps.append(out)
    eps = np.stack(comps)
    eps -= eps.min()
    eps /= max(eps.max(), 1e-12)
    return MediumProfile(grid, lo + (hi - lo) * eps, None)
