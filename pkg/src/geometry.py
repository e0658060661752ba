"""
CP^1 model: chart conventions, quadrature, measures, metric weights and pointwise differential operators
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from src.config import Config
from src.errors import NearZeroDivisionError, PositivityError, QuadratureError
from src.hermpoly import ONE_PLUS_T, BidegreePoly, FrameFunction, ddbar_log_at, monomial_ratio_ddbar, ratio_ddbar_at

logger = logging.getLogger(__name__)

# Normalization ledger for the area-1 round sphere
VOL_ROUND = 1.0
SCAL_ROUND = 8 * math.pi
C_KE = 4 * math.pi
LAMBDA_1 = 8 * math.pi


def laplacian_eigenvalue(k):
    """k-th distinct eigenvalue 4 pi k(k+1) of the round Laplacian"""
    return 4 * math.pi * k * (k + 1)


def constants_ledger():
    return {
        'vol_round': VOL_ROUND,
        'scal_round': SCAL_ROUND,
        'lambda1': LAMBDA_1,
        'c_KE': C_KE,
        'kappa': LAMBDA_1 / 4,
        'kappa_P': Config.POISSON_CONSTANT,
    }


# Stereographic coordinates of the unit sphere, chart 0
X1 = FrameFunction([[0.0, 1.0], [1.0, 0.0]], 1)
X2 = FrameFunction([[0.0, 1j], [-1j, 0.0]], 1)
X3 = FrameFunction([[1.0, 0.0], [0.0, -1.0]], 1)
COORDINATES = {1: X1, 2: X2, 3: X3}


def round_density(z):
    """Round Liouville density per dLeb/pi, total mass 1"""
    z = np.asarray(z, dtype=complex)
    return 1.0 / (1.0 + (z * np.conj(z)).real) ** 2


def random_frame_function(rng, degree):
    """Real-valued bounded FrameFunction with numerator bidegree (degree, degree)"""
    c = rng.standard_normal((degree + 1, degree + 1)) + 1j * rng.standard_normal((degree + 1, degree + 1))
    return FrameFunction((c + c.conj().T) / 2, degree)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Radial Gauss-Legendre in u = t/(1+t) times a uniform angular grid"""

    nodes: np.ndarray
    weights: np.ndarray
    exact_bidegree: int
    exact_weight_power: int
    n_radial: int
    n_angular: int

    def __len__(self):
        return len(self.nodes)

    def covers(self, weight_power, bidegree):
        return weight_power <= self.exact_weight_power and bidegree <= self.exact_bidegree

    def refined(self):
        return _build_rule(2 * self.n_radial, 2 * self.n_angular,
                           self.exact_weight_power, self.exact_bidegree)


def _build_rule(n_radial, n_angular, m, d):
    x, w = roots_legendre(n_radial)
    u = (x + 1.0) / 2.0
    wu = w / 2.0
    radius = np.sqrt(u / (1.0 - u))
    angles = 2.0 * np.pi * np.arange(n_angular) / n_angular
    nodes = (radius[:, None] * np.exp(1j * angles)[None, :]).ravel()
    weights = np.repeat(wu / (n_angular * (1.0 - u) ** 2), n_angular)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, d, m, n_radial, n_angular)


@lru_cache(maxsize=128)
def make_quadrature(m, d):
    """Rule exact for z^j conj(z)^k (1+|z|^2)^-m, j, k <= d and j, k <= m-2"""
    if d < 0 or m < d + 2:
        raise ValueError(f"need m >= d + 2 and d >= 0, got m={m}, d={d}")
    return _build_rule(math.ceil(m / 2) + 1, 2 * d + 1, m, d)


def integrate(rule, f, density=None):
    """Weighted node sum of f (callable or node values, leading axis over nodes)"""
    values = f(rule.nodes) if callable(f) else np.asarray(f)
    if density is not None:
        dens = density(rule.nodes) if callable(density) else np.asarray(density)
        values = values * dens.reshape(dens.shape + (1,) * (values.ndim - 1))
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise QuadratureError(f"integrand is not finite at {bad} node value(s)", {'nodes': len(rule)})
    return np.tensordot(rule.weights, values, axes=(0, 0))


def integrate_adaptive(build, rule, rtol=None, max_doublings=None):
    """Double the node counts until build(rule) is stable; returns (value, verified rule)"""
    rtol = Config.QUADRATURE_RTOL if rtol is None else rtol
    max_doublings = Config.QUADRATURE_MAX_DOUBLINGS if max_doublings is None else max_doublings

    current = np.asarray(build(rule))
    change = float('nan')
    for level in range(max_doublings):
        finer_rule = rule.refined()
        finer = np.asarray(build(finer_rule))
        scale = max(np.linalg.norm(finer), np.finfo(float).tiny)
        change = float(np.linalg.norm(finer - current) / scale)
        if change <= rtol:
            if level:
                logger.debug(f"Quadrature settled after {level} doubling(s), {len(rule)} nodes")
            return finer, rule
        rule, current = finer_rule, finer

    raise QuadratureError(
        f"quadrature did not settle to rtol {rtol:g} within {max_doublings} doublings (last change {change:.3e})",
        {'rtol': rtol, 'last_change': change, 'nodes': len(rule)},
    )


class Measure:
    """Measure on CP^1 given by a density per dLeb/pi in chart 0"""

    is_symmetric = False
    weight_power = 2

    def density(self, z):
        raise NotImplementedError

    def mass(self, rule):
        return float(integrate(rule, self.density).real)

    def describe(self):
        return {'variant': type(self).__name__}


class RoundLiouville(Measure):
    is_symmetric = True

    def density(self, z):
        return round_density(z)


class FixedDensity(Measure):
    """Positive density given as a FrameFunction"""

    def __init__(self, density):
        density = FrameFunction.coerce(density)
        if not density.is_real_valued():
            raise ValueError("density must be real-valued")
        self.frame = density
        self.weight_power = density.weight_power

    def density(self, z):
        values = self.frame(z).real
        if np.any(values <= 0):
            raise PositivityError(f"density is not positive at {int(np.count_nonzero(values <= 0))} node(s)")
        return values

    def describe(self):
        return {'variant': 'FixedDensity', 'weight_power': self.weight_power}


class LiouvilleOfFS(Measure):
    """Liouville measure of the Fubini-Study form of a product q at level p"""

    def __init__(self, q, p):
        q = np.asarray(q, dtype=complex)
        if q.shape != (p + 1, p + 1):
            raise ValueError(f"product of shape {q.shape} does not match level {p}")
        self.q = q
        self.p = p
        self.kernel = fs_kernel(q)

    def density(self, z):
        return _kahler_density(self.kernel, self.p, z)

    def describe(self):
        return {'variant': 'LiouvilleOfFS', 'p': self.p}


def fs_kernel(q):
    """K_q(z) = sum (q^-1)_jk z^j conj(z)^k"""
    q = np.asarray(q, dtype=complex)
    try:
        qinv = np.linalg.inv(q)
    except np.linalg.LinAlgError as exc:
        raise PositivityError(f"product is singular: {exc}") from exc
    return BidegreePoly((qinv + qinv.conj().T) / 2)


def _kahler_density(kernel, p, z):
    values = ddbar_log_at(kernel, z).real
    if p == 0:
        return np.zeros_like(values)
    if np.any(values <= 0):
        raise PositivityError(
            f"Fubini-Study density is not positive (min {values.min():.3e})",
            {'min_density': float(values.min())},
        )
    return values


def fs_kahler_density(q, p, z):
    """Liouville density of omega_FS(q) per dLeb/pi"""
    return _kahler_density(fs_kernel(q), p, z)


@dataclass(frozen=True, eq=False)
class MetricWeight:
    """Pointwise weight w with |s|^2_h = |f_s|^2 w, from a frame function or a kernel 1/K_q"""

    level: int
    frame: FrameFunction = None
    kernel: BidegreePoly = None

    @classmethod
    def round(cls, level):
        return cls(level, frame=FrameFunction(BidegreePoly.constant(1.0), level))

    @classmethod
    def from_product(cls, q, level):
        return cls(level, kernel=fs_kernel(q))

    @property
    def is_round(self):
        return (self.frame is not None
                and self.frame.numerator.degrees == (0, 0)
                and self.frame.weight_power == self.level)

    def __call__(self, z):
        if self.frame is not None:
            return self.frame(z).real
        k = self.kernel(z).real
        if np.any(k <= Config.DIVISION_FLOOR):
            raise NearZeroDivisionError("Fubini-Study kernel vanishes at a node")
        return 1.0 / k

    def describe(self):
        return {'level': self.level, 'kind': 'round' if self.is_round else ('frame' if self.frame else 'fubini_study')}


def _ddbar(f, z):
    if isinstance(f, tuple):
        numerator, denominator = f
        return ratio_ddbar_at(numerator, denominator, z)
    f = FrameFunction.coerce(f)
    return ratio_ddbar_at(f.numerator, ONE_PLUS_T ** f.weight_power, z)


def _density_values(density, z):
    sigma = density(z) if callable(density) else np.asarray(density, dtype=float)
    if np.any(sigma <= Config.DIVISION_FLOOR):
        raise NearZeroDivisionError("area density vanishes at an evaluation point")
    return sigma


def laplace_beltrami_at(density, f, z):
    """Positive Laplacian -(4 pi / sigma) d_z d_zbar f with sigma per dLeb/pi

    f may also pair a stack of square numerator coefficient matrices, shape (..., d+1, d+1),
    with one denominator; the values then have shape z.shape + stack shape and stay complex.
    """
    z = np.asarray(z, dtype=complex)
    sigma = _density_values(density, z)
    if isinstance(f, tuple) and not isinstance(f[0], BidegreePoly):
        coefficients, denominator = np.asarray(f[0], dtype=complex), f[1]
        if coefficients.ndim < 2 or coefficients.shape[-1] != coefficients.shape[-2]:
            raise ValueError(f"numerator stack needs square coefficient matrices, got shape {coefficients.shape}")
        stack, size = coefficients.shape[:-2], coefficients.shape[-1]
        ddbar = monomial_ratio_ddbar(denominator, size - 1, z).reshape(z.shape + (size * size,))
        values = (ddbar @ coefficients.reshape(-1, size * size).T).reshape(z.shape + stack)
        return -4.0 * math.pi * values / sigma.reshape(z.shape + (1,) * len(stack))
    return (-4.0 * math.pi * _ddbar(f, z) / sigma).real


def poisson_bracket_at(density, f, g, z, kappa=None):
    """kappa_P i (f_z g_zb - f_zb g_z) / sigma"""
    kappa = Config.POISSON_CONSTANT if kappa is None else kappa
    z = np.asarray(z, dtype=complex)
    sigma = _density_values(density, z)
    f, g = FrameFunction.coerce(f), FrameFunction.coerce(g)
    value = f.d_z()(z) * g.d_zbar()(z) - f.d_zbar()(z) * g.d_z()(z)
    return (kappa * 1j * value / sigma).real


def poisson_bracket(f, g, kappa=None):
    """Bracket for the round form as a FrameFunction"""
    kappa = Config.POISSON_CONSTANT if kappa is None else kappa
    f, g = FrameFunction.coerce(f), FrameFunction.coerce(g)
    value = (f.d_z() * g.d_zbar() - f.d_zbar() * g.d_z()) * (1j * kappa)
    m = value.weight_power
    if m >= 2:
        return FrameFunction(value.numerator, m - 2).reduced()
    return FrameFunction(value.numerator * ONE_PLUS_T ** (2 - m), 0).reduced()
