import numpy as np
import pytest

from epsmodes.electrostatics import (
    cavity_field_factor,
    constrained_derivative_linear,
    helmholtz_decompose,
    solve_poisson,
)
from epsmodes.errors import ProfileError, SolverError, SourceCompatibilityError
from epsmodes.lattice import (
    EDGE,
    Grid,
    ScalarField,
    VectorField,
    div,
    div_raw,
    grad_raw,
    inner,
)
from epsmodes.medium import Homogeneous, build_profile

from conftest import random_medium, random_vector, smooth_medium


def dense_weighted_laplacian(m):
    """Dense matrix of -div(eps grad .) built from unit scalar fields."""
    g = m.grid
    n = g.ncells
    basis = np.eye(n).reshape(g.dims + (n,))
    cols = -div_raw(m.eps[..., None] * grad_raw(basis, g.spacing), g.spacing)
    return cols.reshape(n, n)


class TestSolvePoisson:
    def test_zero_source(self):
        g = Grid((6, 6, 6))
        m = build_profile(Homogeneous(2.0), g)
        sol = solve_poisson(ScalarField.zeros(g), m)
        assert np.all(sol.chi.values == 0.0)
        assert sol.residual_norm == 0.0

    def test_dipole_pair_matches_dense_solve(self):
        # discrete +-q pair on adjacent cells of a vacuum 8^3 box, solved
        # densely with the mean pinned to zero
        g = Grid((8, 8, 8), 1.0)
        m = build_profile(Homogeneous(1.0), g)
        sigma = np.zeros(g.dims)
        sigma[3, 4, 4] = 1.0
        sigma[4, 4, 4] = -1.0
        sol = solve_poisson(ScalarField(g, sigma), m, tol=1e-12)

        lmat = dense_weighted_laplacian(m)
        n = g.ncells
        aug = np.vstack([lmat, np.ones((1, n))])
        rhs = np.concatenate([sigma.ravel(), [0.0]])
        chi_dense, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
        assert np.abs(sol.chi.values.ravel() - chi_dense).max() < 1e-10

    def test_zero_mean_gauge(self, rng):
        g = Grid((6, 5, 4))
        m = random_medium(g, rng)
        sigma = rng.standard_normal(g.dims)
        sigma -= sigma.mean()
        sol = solve_poisson(ScalarField(g, sigma), m, tol=1e-10)
        assert abs(sol.chi.values.mean()) < 1e-13
        assert sol.residual_norm <= 1e-10

    def test_incompatible_source_rejected(self, rng):
        g = Grid((4, 4, 4))
        m = random_medium(g, rng)
        sigma = rng.standard_normal(g.dims) + 1.0
        with pytest.raises(SourceCompatibilityError):
            solve_poisson(ScalarField(g, sigma), m)
        sol = solve_poisson(ScalarField(g, sigma), m, neutralize=True)
        assert sol.residual_norm <= 1e-10

    def test_nonconvergence_raises_with_residual(self, rng):
        g = Grid((8, 8, 8))
        m = smooth_medium(g, lo=1.0, hi=13.0)
        sigma = rng.standard_normal(g.dims)
        sigma -= sigma.mean()
        with pytest.raises(SolverError) as err:
            solve_poisson(ScalarField(g, sigma), m, tol=1e-12, maxiter=3)
        assert err.value.residual is not None
        assert err.value.residual > 1e-12


class TestHelmholtzDecompose:
    def test_transverse_input_passes_through(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        from epsmodes.lattice import curl_t_raw

        x = VectorField(g, EDGE, curl_t_raw(rng.standard_normal((3,) + g.dims), g.spacing))
        res = helmholtz_decompose(x, m, tol=1e-11)
        scale = np.abs(x.values).max()
        assert np.abs(res.x1.values - x.values).max() <= 1e-9 * scale
        assert np.abs(res.x2.values).max() <= 1e-9 * scale

    def test_weighted_gradient_maps_to_x2(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        psi = rng.standard_normal(g.dims)
        x = VectorField(g, EDGE, m.eps * grad_raw(psi, g.spacing))
        res = helmholtz_decompose(x, m, tol=1e-11)
        assert np.abs(res.x1.values).max() <= 1e-9 * np.abs(x.values).max()

    def test_random_field_properties(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        x = random_vector(g, rng)
        res = helmholtz_decompose(x, m, tol=1e-11)
        # exact reconstruction by construction
        assert np.abs(x.values - res.x1.values - res.x2.values).max() < 1e-12
        # x2 is eps * grad(chi) exactly
        rebuilt = m.eps * grad_raw(res.chi.values, g.spacing)
        assert np.array_equal(res.x2.values, rebuilt)
        # transversality
        xnorm = np.linalg.norm(x.values)
        assert np.linalg.norm(div(res.x1).values) <= 1e-9 * xnorm
        # orthogonality against a probe set of gradients
        for _ in range(5):
            probe = VectorField(g, EDGE, grad_raw(rng.standard_normal(g.dims), g.spacing))
            overlap = inner(res.x1, probe)
            assert abs(overlap) <= 1e-8 * xnorm * np.linalg.norm(probe.values)

    def test_uniqueness_under_redecomposition(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        x = random_vector(g, rng)
        first = helmholtz_decompose(x, m, tol=1e-11)
        again = helmholtz_decompose(
            VectorField(g, EDGE, first.x1.values + first.x2.values), m, tol=1e-11
        )
        assert np.abs(first.x1.values - again.x1.values).max() <= 2e-10

    def test_energy_split_cross_term_free(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        x = random_vector(g, rng)
        res = helmholtz_decompose(x, m, tol=1e-11)
        grad_chi = VectorField(g, EDGE, grad_raw(res.chi.values, g.spacing))
        cross = inner(res.x1, grad_chi)
        bound = 1e-10 * np.linalg.norm(x.values) * max(np.linalg.norm(grad_chi.values), 1e-30)
        assert abs(cross) <= max(bound, 1e-13)


class TestConstrainedDerivative:
    def test_transverse_fixed_point(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        from epsmodes.lattice import curl_t_raw

        x = VectorField(g, EDGE, curl_t_raw(rng.standard_normal((3,) + g.dims), g.spacing))
        out = constrained_derivative_linear(x, m, tol=1e-11)
        assert np.abs(out.values - x.values).max() <= 1e-9 * np.abs(x.values).max()

    def test_weighted_gradient_annihilated(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        psi = rng.standard_normal(g.dims)
        x = VectorField(g, EDGE, m.eps * grad_raw(psi, g.spacing))
        out = constrained_derivative_linear(x, m, tol=1e-11)
        assert np.abs(out.values).max() <= 1e-9 * np.abs(x.values).max()

    def test_idempotent(self, rng):
        g = Grid((6, 6, 6))
        m = smooth_medium(g)
        x = random_vector(g, rng)
        once = constrained_derivative_linear(x, m, tol=1e-10)
        twice = constrained_derivative_linear(once, m, tol=1e-10)
        assert np.abs(twice.values - once.values).max() <= 2e-10 * np.abs(x.values).max()


class TestCavityFieldFactor:
    def test_no_contrast_gives_exactly_one(self):
        assert cavity_field_factor(1.0, Grid((32, 32, 32)), 4.0) == 1.0

    def test_interior_field_uniform(self):
        # classical benchmark: uniform applied field, eps 1 cavity in eps 4
        g = Grid((48, 48, 48), 1.0)
        from epsmodes.electrostatics import solve_poisson_block
        from epsmodes.medium import Sphere

        center = (24.0, 24.0, 24.0)
        m = build_profile(Sphere(center, 6.0, 1.0, 4.0), g)
        applied = np.zeros((3,) + g.dims)
        applied[0] = 1.0
        rhs = -div_raw(m.eps * applied, g.spacing)
        chi, _, _ = solve_poisson_block(rhs, m, tol=1e-10)
        total = applied - grad_raw(chi, g.spacing)
        pts = g.component_positions(EDGE, 0)
        r = np.linalg.norm(pts - np.array(center), axis=-1)
        interior = total[0][r <= 4.0]
        assert interior.std() / interior.mean() <= 0.03

    def test_monotone_in_host_permittivity(self):
        g = Grid((32, 32, 32), 1.0)
        factors = [cavity_field_factor(e, g, 4.0, tol=1e-9) for e in (1.0, 2.25, 4.0, 9.0)]
        assert all(b > a for a, b in zip(factors, factors[1:]))

    def test_radius_bounds(self):
        g = Grid((32, 32, 32))
        with pytest.raises(ProfileError):
            cavity_field_factor(4.0, g, 1.0)
        with pytest.raises(ProfileError):
            cavity_field_factor(4.0, g, 12.0)
        with pytest.raises(ProfileError):
            cavity_field_factor(-1.0, g, 4.0)
