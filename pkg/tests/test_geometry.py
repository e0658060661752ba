import math

import numpy as np
import pytest
from scipy.special import beta

from src.errors import PositivityError, QuadratureError
from src.geometry import (
    COORDINATES, LAMBDA_1, X1, X2, X3, FixedDensity, LiouvilleOfFS, MetricWeight, RoundLiouville,
    constants_ledger, fs_kahler_density, integrate, integrate_adaptive, laplace_beltrami_at,
    laplacian_eigenvalue, make_quadrature, poisson_bracket, poisson_bracket_at, random_frame_function,
    round_density,
)
from src.hermpoly import ONE_PLUS_T, FrameFunction
from src.quantization import round_product


def test_constants_ledger_is_consistent():
    ledger = constants_ledger()
    assert ledger['lambda1'] == pytest.approx(8 * math.pi)
    assert ledger['c_KE'] == pytest.approx(4 * math.pi)
    assert ledger['kappa'] == pytest.approx(2 * math.pi)
    assert laplacian_eigenvalue(1) == pytest.approx(LAMBDA_1)


@pytest.mark.parametrize("m,d", [(2, 0), (5, 3), (9, 6), (14, 12)])
def test_quadrature_integrates_radial_moments_exactly(m, d):
    rule = make_quadrature(m, d)
    for j in range(min(d, m - 2) + 1):
        values = np.abs(rule.nodes) ** (2 * j) / (1 + np.abs(rule.nodes) ** 2) ** m
        # integral over the plane against dLeb/pi equals B(j+1, m-j-1)
        assert integrate(rule, values) == pytest.approx(beta(j + 1, m - j - 1), rel=1e-12)


def test_quadrature_kills_off_diagonal_moments():
    rule = make_quadrature(8, 5)
    z = rule.nodes
    for j, k in [(1, 0), (3, 1), (5, 2)]:
        values = z ** j * np.conj(z) ** k / (1 + np.abs(z) ** 2) ** 8
        assert abs(integrate(rule, values)) < 1e-13


def test_make_quadrature_rejects_non_integrable_weights():
    with pytest.raises(ValueError):
        make_quadrature(3, 2)
    with pytest.raises(ValueError):
        make_quadrature(4, -1)


def test_round_measure_has_unit_mass():
    rule = make_quadrature(4, 2)
    assert RoundLiouville().mass(rule) == pytest.approx(1.0, rel=1e-13)


def test_integrate_rejects_non_finite_values():
    rule = make_quadrature(4, 2)
    values = np.ones(len(rule))
    values[3] = np.nan
    with pytest.raises(QuadratureError):
        integrate(rule, values)


def test_adaptive_integration_of_fubini_study_mass(rng):
    p = 3
    x = rng.standard_normal((p + 1, p + 1)) + 1j * rng.standard_normal((p + 1, p + 1))
    q = x @ x.conj().T + np.eye(p + 1)
    measure = LiouvilleOfFS(q, p)
    value, verified = integrate_adaptive(lambda r: np.asarray(measure.mass(r)), make_quadrature(4, 2))
    # the Fubini-Study form of a degree-p embedding has area p
    assert value == pytest.approx(p, rel=1e-9)
    assert len(verified) >= len(make_quadrature(4, 2))


def test_adaptive_integration_reports_exhausted_refinement():
    with pytest.raises(QuadratureError):
        integrate_adaptive(lambda r: np.asarray(len(r), dtype=float), make_quadrature(4, 2), max_doublings=2)


def test_round_metric_weight_matches_round_product(sample_points):
    p = 5
    round_weight = MetricWeight.round(p)
    product_weight = MetricWeight.from_product(round_product(p), p)
    assert round_weight.is_round
    assert not product_weight.is_round
    np.testing.assert_allclose(product_weight(sample_points), round_weight(sample_points), rtol=1e-12)


def test_fs_density_of_round_product_is_round(sample_points):
    p = 4
    values = fs_kahler_density(round_product(p), p, sample_points)
    np.testing.assert_allclose(values, p * round_density(sample_points), rtol=1e-12)


def test_fixed_density_rejects_nonpositive_values():
    measure = FixedDensity(FrameFunction(ONE_PLUS_T * 0.0 - 1.0, 2))
    with pytest.raises(PositivityError):
        measure.density(np.array([0.5]))


def test_liouville_of_fs_checks_shape():
    with pytest.raises(ValueError):
        LiouvilleOfFS(np.eye(3), 4)


@pytest.mark.parametrize("axis", [1, 2, 3])
def test_coordinates_are_first_laplacian_eigenfunctions(axis, sample_points):
    f = COORDINATES[axis]
    values = laplace_beltrami_at(round_density, f, sample_points)
    np.testing.assert_allclose(values, LAMBDA_1 * f(sample_points).real, atol=1e-10)


def test_laplacian_accepts_numerator_denominator_pairs(sample_points):
    values = laplace_beltrami_at(round_density, (X3.numerator, ONE_PLUS_T), sample_points)
    np.testing.assert_allclose(values, LAMBDA_1 * X3(sample_points).real, atol=1e-10)


def test_poisson_bracket_of_coordinates(sample_points):
    kappa = 2 * math.pi
    values = poisson_bracket_at(round_density, X1, X2, sample_points, kappa)
    np.testing.assert_allclose(values, -2 * kappa * X3(sample_points).real, atol=1e-10)


def test_symbolic_bracket_matches_pointwise(sample_points, rng):
    f = FrameFunction(rng.standard_normal((2, 2)) * np.array([[1, 0], [0, 1]]), 1) + X1
    g = X2 * 0.5 + X3
    symbolic = poisson_bracket(f, g, 2 * math.pi)
    pointwise = poisson_bracket_at(round_density, f, g, sample_points, 2 * math.pi)
    assert symbolic.is_bounded()
    np.testing.assert_allclose(symbolic(sample_points).real, pointwise, atol=1e-10)


def test_symbolic_bracket_of_coordinates_is_bounded(sample_points):
    kappa = 2 * math.pi
    bracket = poisson_bracket(X1, X2, kappa)
    assert bracket.is_bounded()
    assert bracket.weight_power == 1
    np.testing.assert_allclose(bracket(sample_points).real, -2 * kappa * X3(sample_points).real, atol=1e-10)
    for f, g in [(X2, X3), (X3, X1)]:
        assert poisson_bracket(f, g, kappa).is_bounded()


def test_degree_two_harmonic_has_second_eigenvalue(sample_points):
    f = X1 * X2
    values = laplace_beltrami_at(round_density, f, sample_points)
    assert laplacian_eigenvalue(2) == pytest.approx(24 * math.pi)
    np.testing.assert_allclose(values, laplacian_eigenvalue(2) * f(sample_points).real, atol=1e-9)


def test_laplacian_is_symmetric_under_round_measure(rng):
    rule = make_quadrature(10, 6)
    f, g = random_frame_function(rng, 2), random_frame_function(rng, 2)
    f_vals, g_vals = f(rule.nodes).real, g(rule.nodes).real
    f_lap = laplace_beltrami_at(round_density, f, rule.nodes)
    g_lap = laplace_beltrami_at(round_density, g, rule.nodes)
    lhs = integrate(rule, f_vals * g_lap, round_density)
    rhs = integrate(rule, g_vals * f_lap, round_density)
    assert lhs == pytest.approx(rhs, abs=1e-8)
    assert integrate(rule, g_lap, round_density) == pytest.approx(0.0, abs=1e-8)


def test_laplacian_of_numerator_stack_matches_single_ratios(sample_points):
    stack = np.stack([X1.numerator.coeffs, X3.numerator.coeffs, np.array([[0.0, 1.0], [0.0, 0.0]])])
    values = laplace_beltrami_at(round_density, (stack, ONE_PLUS_T), sample_points)
    assert values.shape == sample_points.shape + (3,)
    np.testing.assert_allclose(values[:, 0].real, LAMBDA_1 * X1(sample_points).real, atol=1e-10)
    np.testing.assert_allclose(values[:, 1].real, LAMBDA_1 * X3(sample_points).real, atol=1e-10)
    # conj(z) / (1 + |z|^2) is half of x1 - i x2
    np.testing.assert_allclose(values[:, 2], LAMBDA_1 * (X1(sample_points) - 1j * X2(sample_points)) / 2,
                               atol=1e-10)


def test_laplacian_rejects_non_square_numerator_stack(sample_points):
    with pytest.raises(ValueError):
        laplace_beltrami_at(round_density, (np.ones((2, 2, 3)), ONE_PLUS_T), sample_points)


def test_bracket_is_antisymmetric_and_satisfies_leibniz(rng, sample_points):
    kappa = 2 * math.pi
    f, g, h = (random_frame_function(rng, 1) for _ in range(3))
    np.testing.assert_allclose(poisson_bracket(f, f, kappa)(sample_points), 0.0, atol=1e-10)
    lhs = poisson_bracket(f, g * h, kappa)(sample_points)
    rhs = (poisson_bracket(f, g, kappa) * h + g * poisson_bracket(f, h, kappa))(sample_points)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_round_second_moment_of_height():
    rule = make_quadrature(6, 2)
    assert integrate(rule, lambda z: X3(z).real ** 2, round_density) == pytest.approx(1 / 3, rel=1e-12)
    assert integrate(rule, lambda z: (X1 * X2)(z).real, round_density) == pytest.approx(0.0, abs=1e-14)
