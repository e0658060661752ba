import math

import numpy as np
import pytest

from src.bundles import round_bundle_setup
from src.geometry import X1, X2
from src.hermpoly import Z, FrameFunction
from src.stages import (
    FibrationSetup, TotalSymbol, check_functoriality, check_symbol_functoriality, fiber_matrices,
    fiber_quantize, fiber_symbol, total_quantize, total_section_count, weak_coupling_residual,
)


def random_hermitian(rng, dim):
    x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (x + x.conj().T) / 2


def test_fiber_quantization_of_height_function():
    setup = FibrationSetup.build((0, 1), 3)
    value = fiber_quantize(setup, TotalSymbol.fiber_coordinate(3), 0.4 + 0.2j)
    np.testing.assert_allclose(value, np.diag([1 / 3, -1 / 3]), atol=1e-13)


def test_fiber_matrices_are_hermitian_pairs():
    mats = fiber_matrices(2)
    assert mats.shape == (3, 3, 2, 2)
    for j in range(3):
        for k in range(3):
            np.testing.assert_allclose(mats[j, k], mats[k, j].conj().T, atol=1e-13)


def test_total_symbol_values(sample_points):
    xi3 = TotalSymbol.fiber_coordinate(3)
    zeta = 0.7 - 0.4j
    t = abs(zeta) ** 2
    np.testing.assert_allclose(xi3(sample_points, zeta), (1 - t) / (1 + t), atol=1e-13)


def test_lift_and_sum_preserve_values(rng):
    f = TotalSymbol.random(rng)
    g = TotalSymbol.pullback(X1)
    z, zeta = np.array([0.3 + 0.1j, -1.1]), np.array([0.5j, 2.0 + 0.5j])
    np.testing.assert_allclose(f.lift(3)(z, zeta), f(z, zeta), atol=1e-12)
    np.testing.assert_allclose((f + g)(z, zeta), f(z, zeta) + X1(z).real, atol=1e-12)
    with pytest.raises(ValueError):
        f.lift(0)


def test_total_symbol_validation():
    one = FrameFunction.constant(1.0)
    with pytest.raises(ValueError):
        TotalSymbol([[one, one * 1j], [one * 1j, one]], 1)
    with pytest.raises(ValueError):
        TotalSymbol([[FrameFunction(Z * Z, 1)]], 0)
    with pytest.raises(ValueError):
        TotalSymbol([[one]], 1)
    with pytest.raises(ValueError):
        TotalSymbol.fiber_coordinate(4)


def test_fibration_needs_rank_two():
    with pytest.raises(ValueError):
        FibrationSetup(round_bundle_setup((0,), 3))
    with pytest.raises(ValueError):
        FibrationSetup(round_bundle_setup((0, 1, 2), 3))
    setup = FibrationSetup.build((0, 2), 3)
    assert setup.describe()['fiber_degree'] == 1


@pytest.mark.parametrize("degrees", [(0, 1), (0, 0), (1, 2)])
def test_quantization_commutes_with_reduction(degrees, rng):
    setup = FibrationSetup.build(degrees, 4)
    for _ in range(2):
        assert check_functoriality(setup, TotalSymbol.random(rng)) <= 1e-8


def test_pullback_quantizes_blockwise():
    setup = FibrationSetup.build((0, 1), 3)
    total = total_quantize(setup, TotalSymbol.pullback(X1 * 0.5 + 1.0))
    staged = fiber_symbol(TotalSymbol.pullback(X1 * 0.5 + 1.0))
    assert staged.frame == 'unitary'
    assert check_functoriality(setup, TotalSymbol.pullback(X1 * 0.5 + 1.0)) <= 1e-8
    np.testing.assert_allclose(total, total.conj().T, atol=1e-13)


def test_total_sections_span_the_bundle_space():
    p = 3
    for degrees in [(0, 1), (1, 1), (0, 2)]:
        setup = FibrationSetup.build(degrees, p)
        assert total_section_count(setup) == sum(p + a + 1 for a in degrees)


def test_total_section_count_is_limited_by_sample_points():
    setup = FibrationSetup.build((0, 1), 3)
    assert setup.bundle.dim == 9
    assert total_section_count(setup, samples=5, seed=2) == 5
    assert total_section_count(setup, samples=30, seed=2) == 9


def test_weighted_symbol_functoriality_holds(rng):
    setup = FibrationSetup.build((0, 1), 4)
    A = random_hermitian(rng, setup.bundle.dim)
    assert check_symbol_functoriality(setup, A, samples=16, seed=3) <= 1e-8


def test_literal_symbol_functoriality_needs_constant_rawnsley_density(rng):
    flat = FibrationSetup.build((0, 0), 4)
    A = random_hermitian(rng, flat.bundle.dim)
    assert check_symbol_functoriality(flat, A, samples=16, seed=3, weighted=False) <= 1e-8

    twisted = FibrationSetup.build((0, 1), 4)
    A = random_hermitian(rng, twisted.bundle.dim)
    assert check_symbol_functoriality(twisted, A, samples=16, seed=3, weighted=False) > 1e-6


@pytest.mark.parametrize("p", [2, 4, 8])
def test_weak_coupling_residual_on_trivial_bundle(p):
    setup = FibrationSetup.build((0, 0), p)
    f = TotalSymbol.fiber_coordinate(3, X1)
    g = TotalSymbol.fiber_coordinate(3, X2)
    residual = weak_coupling_residual(setup, f, g, 2 * math.pi)
    assert p ** 2 * residual == pytest.approx(4 * p ** 2 / (9 * (p + 2) ** 2), rel=1e-6)


@pytest.mark.parametrize("degrees", [(0, 1), (0, 0)])
@pytest.mark.parametrize("p", [4, 8])
def test_functoriality_over_seeded_symbols(degrees, p):
    setup = FibrationSetup.build(degrees, p)
    rng = np.random.default_rng(2024)
    for _ in range(20):
        assert check_functoriality(setup, TotalSymbol.random(rng)) <= 1e-8
        A = random_hermitian(rng, setup.bundle.dim)
        assert check_symbol_functoriality(setup, A, samples=16, seed=5) <= 1e-8


def test_total_quantization_is_stable_under_node_doubling(rng):
    p, degrees = 4, (0, 1)
    coarse = FibrationSetup.build(degrees, p)
    fine = FibrationSetup(round_bundle_setup(degrees, p, rule=coarse.bundle.rule.refined()))
    f = TotalSymbol.random(rng)
    np.testing.assert_allclose(total_quantize(fine, f), total_quantize(coarse, f), atol=1e-12)
    assert check_functoriality(fine, f) <= 1e-8


def test_fiber_coordinates_quantize_to_constant_blocks():
    p = 3
    setup = FibrationSetup.build((0, 0), p)
    eye = np.eye(p + 1)
    zero = np.zeros((p + 1, p + 1))
    xi3 = total_quantize(setup, TotalSymbol.fiber_coordinate(3))
    np.testing.assert_allclose(xi3, np.block([[eye, zero], [zero, -eye]]) / 3, atol=1e-12)
    xi1 = total_quantize(setup, TotalSymbol.fiber_coordinate(1))
    np.testing.assert_allclose(xi1, np.block([[zero, eye], [eye, zero]]) / 3, atol=1e-12)
