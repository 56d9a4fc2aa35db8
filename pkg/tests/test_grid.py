import numpy as np
import pytest
from numpy.testing import assert_allclose

from btnsim.error_handlers import FieldError, ValidationError
from btnsim.grid import (
    Grid, ScalarField, VectorField2, anisotropic_form, dirichlet_form, gradient, integrate,
    laplacian_dirichlet, norm_suite,
)


def test_grid_rejects_too_few_nodes():
    with pytest.raises(ValidationError) as exc:
        Grid(2, 5)
    assert exc.value.field_name == 'nx'


def test_grid_rejects_non_positive_length():
    with pytest.raises(ValidationError):
        Grid(5, 5, ly=0.0)


def test_grid_spacing_and_interior(grid9):
    assert grid9.hx == pytest.approx(0.125)
    assert grid9.n_interior == 49
    assert grid9.interior_index[0] == grid9.ny + 1


def test_fingerprint_depends_on_geometry():
    assert Grid(9, 9).fingerprint() == Grid(9, 9).fingerprint()
    assert Grid(9, 9).fingerprint() != Grid(9, 9, lx=2.0).fingerprint()


def test_boundary_zero_field_rejects_boundary_values(grid9):
    values = np.ones(grid9.shape)
    with pytest.raises(FieldError):
        ScalarField(grid9, values, boundary_zero=True)


def test_field_rejects_non_finite(grid9):
    values = np.zeros(grid9.shape)
    values[3, 3] = np.nan
    with pytest.raises(FieldError):
        ScalarField(grid9, values)


def test_field_is_read_only(grid9):
    f = ScalarField.zeros(grid9)
    with pytest.raises(ValueError):
        f.values[1, 1] = 1.0


def test_from_function_clamps_boundary(grid9, sines):
    f = ScalarField.from_function(grid9, sines, boundary_zero=True)
    assert np.all(f.values[-1, :] == 0.0)
    assert np.all(f.values[:, -1] == 0.0)


def test_gradient_exact_on_linear(grid9):
    f = ScalarField.from_function(grid9, lambda X, Y: 3.0 * X - 2.0 * Y)
    g = gradient(f)
    assert_allclose(g.m1.values, 3.0, atol=1e-12)
    assert_allclose(g.m2.values, -2.0, atol=1e-12)


def test_gradient_second_order(sines):
    errors = []
    for n in (33, 65):
        grid = Grid(n, n)
        X, Y = grid.coordinates
        g = gradient(ScalarField.from_function(grid, sines, boundary_zero=True))
        exact = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        errors.append(np.max(np.abs(g.m1.values - exact)))
    assert errors[0] / errors[1] > 3.5


def test_laplacian_requires_boundary_zero(grid9):
    f = ScalarField(grid9, np.ones(grid9.shape))
    with pytest.raises(FieldError):
        laplacian_dirichlet(f)


def test_laplacian_eigenfunction_converges(sines):
    errors = []
    for n in (17, 33, 65):
        grid = Grid(n, n)
        s = ScalarField.from_function(grid, sines, boundary_zero=True)
        lap = laplacian_dirichlet(s).values
        errors.append(np.max(np.abs(lap + 2.0 * np.pi ** 2 * s.values)[1:-1, 1:-1]))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.1)


def test_laplacian_boundary_is_zero(grid9, sines):
    lap = laplacian_dirichlet(ScalarField.from_function(grid9, sines, boundary_zero=True))
    assert lap.boundary_zero


def test_integrate_constant_exactly():
    grid = Grid(7, 11, lx=2.0, ly=3.0)
    assert integrate(ScalarField(grid, np.ones(grid.shape))) == pytest.approx(6.0, rel=1e-14)


def test_integrate_uses_trapezoid_weights():
    grid = Grid(5, 4, lx=1.0, ly=0.6)
    values = np.random.default_rng(2).standard_normal(grid.shape)
    wx = np.array([0.5, 1.0, 1.0, 1.0, 0.5])
    wy = np.array([0.5, 1.0, 1.0, 0.5])
    expected = float(np.sum(np.outer(wx, wy) * values)) * grid.hx * grid.hy
    assert integrate(ScalarField(grid, values)) == pytest.approx(expected, rel=1e-13)


def test_integrate_sines(sines):
    grid = Grid(65, 65)
    value = integrate(ScalarField.from_function(grid, sines))
    assert value == pytest.approx(4.0 / np.pi ** 2, rel=1e-3)


def test_dirichlet_form_matches_laplacian(grid17, random_m):
    u = random_m(grid17, seed=3).m1
    lap = laplacian_dirichlet(u)
    expected = -integrate(u.with_values(u.values * lap.values, boundary_zero=False))
    assert dirichlet_form(u) == pytest.approx(expected, rel=1e-12)


def test_dirichlet_form_symmetric(grid17, random_m):
    m = random_m(grid17, seed=4)
    assert dirichlet_form(m.m1, m.m2) == pytest.approx(dirichlet_form(m.m2, m.m1), rel=1e-13)


def test_anisotropic_form_vanishes_for_zero_m(grid17, random_m):
    u = random_m(grid17).m1
    assert anisotropic_form(VectorField2.zeros(grid17), u) == 0.0


def test_anisotropic_form_non_negative(grid17, random_m):
    m = random_m(grid17, seed=1)
    u = random_m(grid17, seed=2).m1
    assert anisotropic_form(m, u) >= 0.0


def test_norm_suite_m_l2(sines):
    grid = Grid(65, 65)
    s = ScalarField.from_function(grid, sines, boundary_zero=True)
    m = VectorField2(s, s)
    p = ScalarField.zeros(grid)
    norms = norm_suite(m, p, ScalarField.zeros(grid), gamma=1.0)
    assert norms.m_l2sq == pytest.approx(0.5, rel=1e-3)
    assert norms.m_l2gamma == pytest.approx(norms.m_l2sq)
    assert norms.m_linf == pytest.approx(np.sqrt(2.0), rel=1e-12)
    assert norms.grad_p_l2sq == 0.0


def test_norm_suite_rejects_small_gamma(grid9):
    zero = VectorField2.zeros(grid9)
    with pytest.raises(ValidationError):
        norm_suite(zero, ScalarField.zeros(grid9), ScalarField.zeros(grid9), gamma=0.5)
