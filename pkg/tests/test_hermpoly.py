import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from src.errors import NearZeroDivisionError
from src.geometry import random_frame_function
from src.hermpoly import (
    ONE_PLUS_T, Z, ZBAR, BidegreePoly, FrameFunction, add, d_z, d_zbar, ddbar_log_at, evaluate,
    monomial_ratio_ddbar, mul, ratio_ddbar_at,
)

finite = st.floats(min_value=-3, max_value=3, allow_nan=False, allow_infinity=False)


def coefficient_matrices(max_degree=3):
    shapes = st.tuples(st.integers(1, max_degree + 1), st.integers(1, max_degree + 1))
    return shapes.flatmap(lambda shape: arrays(np.float64, shape, elements=finite))


points = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def test_evaluate_matches_direct_sum():
    coeffs = np.array([[1.0, 2.0], [0.5j, -1.0]])
    P = BidegreePoly(coeffs)
    z = 0.7 - 0.2j
    expected = 1.0 + 2.0 * np.conj(z) + 0.5j * z - z * np.conj(z)
    assert evaluate(P, z) == pytest.approx(expected)
    assert P(z) == pytest.approx(expected)


def test_evaluate_broadcasts_over_point_arrays(sample_points):
    values = ONE_PLUS_T(sample_points)
    assert values.shape == sample_points.shape
    np.testing.assert_allclose(values, 1 + np.abs(sample_points) ** 2)


@given(coefficient_matrices(), coefficient_matrices(), points)
def test_product_is_multiplicative(a, b, z):
    P, Q = BidegreePoly(a), BidegreePoly(b)
    assert mul(P, Q)(z) == pytest.approx(P(z) * Q(z), rel=1e-9, abs=1e-6)
    assert add(P, Q)(z) == pytest.approx(P(z) + Q(z), rel=1e-12, abs=1e-12)


@given(coefficient_matrices(), points)
def test_wirtinger_derivatives_commute(a, z):
    P = BidegreePoly(a)
    assert d_z(d_zbar(P))(z) == pytest.approx(d_zbar(d_z(P))(z), rel=1e-12, abs=1e-12)


@given(coefficient_matrices(), points)
def test_conj_is_pointwise_conjugate(a, z):
    P = BidegreePoly(a + 1j * a[::-1, ::-1])
    assert P.conj()(z) == pytest.approx(np.conj(P(z)), rel=1e-12, abs=1e-12)


@given(coefficient_matrices())
def test_hermitian_part_is_real_valued(a):
    P = BidegreePoly(a + 1j * a)
    H = P + P.conj()
    assert H.is_real_valued()
    z = np.array([0.3 + 0.1j, -1.2j, 2.0])
    np.testing.assert_allclose(H(z).imag, 0, atol=1e-9)


def test_derivatives_match_finite_differences():
    f = FrameFunction(Z * Z * ZBAR + 0.5 * Z, 2)
    z, h = 0.4 + 0.3j, 1e-6
    dx = (f(z + h) - f(z - h)) / (2 * h)
    dy = (f(z + 1j * h) - f(z - 1j * h)) / (2 * h)
    assert f.d_z()(z) == pytest.approx((dx - 1j * dy) / 2, rel=1e-6)
    assert f.d_zbar()(z) == pytest.approx((dx + 1j * dy) / 2, rel=1e-6)


def test_frame_function_arithmetic_lifts_weights():
    f = FrameFunction(Z, 1)
    g = FrameFunction(ZBAR, 2)
    z = 0.8 - 0.5j
    assert (f + g).weight_power == 2
    assert (f + g)(z) == pytest.approx(f(z) + g(z))
    assert (f * g)(z) == pytest.approx(f(z) * g(z))
    assert (f - 1.0)(z) == pytest.approx(f(z) - 1.0)


def test_bounded_and_real_predicates():
    assert FrameFunction(Z * ZBAR, 1).is_bounded()
    assert not FrameFunction(Z * Z, 1).is_bounded()
    assert FrameFunction(Z + ZBAR, 1).is_real_valued()
    assert not FrameFunction(Z, 1).is_real_valued()


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        FrameFunction(Z, -1)


def test_ddbar_log_of_round_kernel(sample_points):
    values = ddbar_log_at(ONE_PLUS_T, sample_points)
    np.testing.assert_allclose(values, 1 / (1 + np.abs(sample_points) ** 2) ** 2, rtol=1e-12)


def test_ratio_ddbar_of_polynomial_over_one():
    P = Z * Z * ZBAR * ZBAR
    z = 0.6 + 0.2j
    # d_z d_zbar |z|^4 = 4 |z|^2
    assert ratio_ddbar_at(P, BidegreePoly.constant(1.0), z) == pytest.approx(4 * abs(z) ** 2)


def test_monomial_ratio_ddbar_agrees_with_quotient_rule(sample_points):
    Q = ONE_PLUS_T ** 3
    table = monomial_ratio_ddbar(Q, 3, sample_points)
    assert table.shape == sample_points.shape + (4, 4)
    for j, k in [(0, 0), (1, 0), (2, 3), (3, 3)]:
        direct = ratio_ddbar_at(BidegreePoly.monomial(j, k), Q, sample_points)
        np.testing.assert_allclose(table[..., j, k], direct, rtol=1e-10, atol=1e-12)


def test_division_floor_raises():
    with pytest.raises(NearZeroDivisionError):
        ddbar_log_at(Z, 0.0)


def test_ddbar_log_converges_at_second_order():
    Q = ONE_PLUS_T + 0.3 * (Z + ZBAR) + 0.2 * Z * Z * ZBAR * ZBAR
    z = 0.4 - 0.25j
    exact = ddbar_log_at(Q, z).real

    def log_q(w):
        return np.log(np.abs(Q(w)))

    errors = []
    for h in (0.1, 0.05, 0.025):
        # d_z d_zbar = Laplacian / 4
        stencil = (log_q(z + h) + log_q(z - h) + log_q(z + 1j * h) + log_q(z - 1j * h) - 4 * log_q(z)) / h ** 2
        errors.append(abs(stencil / 4 - exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


def test_frame_function_product_is_pointwise(rng):
    z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    for _ in range(5):
        f, g = random_frame_function(rng, 2), random_frame_function(rng, 3)
        expected = f(z) * g(z)
        scale = np.max(np.abs(expected))
        np.testing.assert_allclose(mul(f, g)(z), expected, rtol=1e-12, atol=1e-12 * scale)


def test_real_valued_polynomial_has_negligible_imaginary_part(rng):
    c = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    P = BidegreePoly(c + c.conj().T)
    assert P.is_real_valued()
    z = 1.5 * (rng.uniform(-1, 1, 100) + 1j * rng.uniform(-1, 1, 100)) / np.sqrt(2)
    assert np.max(np.abs(P(z).imag)) <= 1e-12 * np.linalg.norm(P.coeffs)


def test_reduced_cancels_common_round_factors(sample_points):
    x3 = FrameFunction(ONE_PLUS_T - 2 * Z * ZBAR, 1)
    lifted = FrameFunction(x3.numerator * ONE_PLUS_T ** 2, 3)
    reduced = lifted.reduced()
    assert reduced.weight_power == 1
    assert reduced.numerator.degrees == (1, 1)
    assert reduced.is_bounded()
    np.testing.assert_allclose(reduced(sample_points), x3(sample_points), atol=1e-12)


def test_reduced_keeps_irreducible_numerators():
    f = FrameFunction(Z * Z, 1)
    assert f.reduced().weight_power == 1
    assert Z.divide_one_plus_t() is None
    assert (Z * Z * ZBAR + 0.5 * Z).divide_one_plus_t() is None
    assert FrameFunction(BidegreePoly.constant(0.0), 4).reduced().weight_power == 0
