"""
Quantization in stages for the projectivization of a rank-2 split bundle
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from src.bundles import (
    BundleSetup, EndoSymbol, bundle_berezin_symbol, bundle_toeplitz, round_bundle_setup,
    structure_symbol,
)
from src.config import Config
from src.geometry import make_quadrature, random_frame_function, round_density
from src.hermpoly import BidegreePoly, FrameFunction
from src.quantization import _toeplitz_values, coherent_projector, hermitize, round_setup

logger = logging.getLogger(__name__)


def fiber_rule(fiber_degree):
    return make_quadrature(fiber_degree + 3, fiber_degree + 1)


@lru_cache(maxsize=8)
def fiber_setup(fiber_degree):
    """Level-1 quantization of the fiber CP^1 with the round product"""
    return round_setup(1, rule=fiber_rule(fiber_degree))


@lru_cache(maxsize=8)
def fiber_matrices(fiber_degree):
    """M_jk = fiber Toeplitz matrix of zeta^j conj(zeta)^k / (1+|zeta|^2)^d, shape (d+1, d+1, 2, 2)"""
    setup = fiber_setup(fiber_degree)
    rule = setup.rule
    d = fiber_degree
    out = np.zeros((d + 1, d + 1, 2, 2), dtype=complex)
    for j in range(d + 1):
        for k in range(d + 1):
            mono = FrameFunction(BidegreePoly.monomial(j, k), d)
            out[j, k] = _toeplitz_values(setup, mono, rule)
    out.setflags(write=False)
    return out


def _fiber_monomials(zeta, fiber_degree):
    zeta = np.asarray(zeta, dtype=complex)
    j = np.arange(fiber_degree + 1)
    zp = zeta[..., None] ** j
    weight = (1.0 + (zeta * np.conj(zeta)).real) ** fiber_degree
    return zp[..., :, None] * np.conj(zp)[..., None, :] / weight[..., None, None]


class TotalSymbol:
    """sum_jk f_jk(z) zeta^j conj(zeta)^k / (1+|zeta|^2)^d with f_jk = conj(f_kj)"""

    def __init__(self, coefficients, fiber_degree):
        d = fiber_degree
        coefficients = [[FrameFunction.coerce(c) for c in row] for row in coefficients]
        if len(coefficients) != d + 1 or any(len(row) != d + 1 for row in coefficients):
            raise ValueError(f"need a {d + 1} x {d + 1} coefficient matrix for fiber degree {d}")
        for j in range(d + 1):
            for k in range(j, d + 1):
                a, b = coefficients[j][k], coefficients[k][j].conj()
                if not np.allclose((a - b).numerator.coeffs, 0, atol=1e-14):
                    raise ValueError(f"coefficients ({j},{k}) and ({k},{j}) are not conjugate")
                if not (a.is_bounded() and b.is_bounded()):
                    raise ValueError("total symbols need bounded base coefficients")
        self.coefficients = tuple(tuple(row) for row in coefficients)
        self.fiber_degree = d

    @classmethod
    def pullback(cls, g):
        return cls([[g]], 0)

    @classmethod
    def fiber_coordinate(cls, axis, base=None):
        """Stereographic coordinate xi_axis of the fiber, optionally times a base function"""
        base = FrameFunction.constant(1.0) if base is None else FrameFunction.coerce(base)
        zero = FrameFunction.constant(0.0)
        if axis == 1:
            coeffs = [[zero, base], [base, zero]]
        elif axis == 2:
            coeffs = [[zero, base * 1j], [base * (-1j), zero]]
        elif axis == 3:
            coeffs = [[base, zero], [zero, -base]]
        else:
            raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
        return cls(coeffs, 1)

    @classmethod
    def random(cls, rng, base_degree=1, fiber_degree=1):
        d = fiber_degree
        coeffs = [[None] * (d + 1) for _ in range(d + 1)]
        for j in range(d + 1):
            coeffs[j][j] = random_frame_function(rng, base_degree)
            for k in range(j + 1, d + 1):
                c = rng.standard_normal((base_degree + 1,) * 2) + 1j * rng.standard_normal((base_degree + 1,) * 2)
                coeffs[j][k] = FrameFunction(c, base_degree)
                coeffs[k][j] = coeffs[j][k].conj()
        return cls(coeffs, d)

    @property
    def base_weight_power(self):
        return max(c.weight_power for row in self.coefficients for c in row)

    def lift(self, fiber_degree):
        """Same function over (1+|zeta|^2)^fiber_degree"""
        if fiber_degree < self.fiber_degree:
            raise ValueError("cannot lower the fiber degree")
        coeffs = [list(row) for row in self.coefficients]
        for d in range(self.fiber_degree, fiber_degree):
            zero = FrameFunction.constant(0.0)
            grown = [[zero] * (d + 2) for _ in range(d + 2)]
            for j in range(d + 1):
                for k in range(d + 1):
                    grown[j][k] = grown[j][k] + coeffs[j][k]
                    grown[j + 1][k + 1] = grown[j + 1][k + 1] + coeffs[j][k]
            coeffs = grown
        return TotalSymbol(coeffs, fiber_degree)

    def __add__(self, other):
        d = max(self.fiber_degree, other.fiber_degree)
        a, b = self.lift(d), other.lift(d)
        return TotalSymbol([[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a.coefficients, b.coefficients)], d)

    def coefficient_values(self, z):
        z = np.asarray(z, dtype=complex)
        return np.stack([np.stack([c(z) for c in row], axis=-1) for row in self.coefficients], axis=-2)

    def __call__(self, z, zeta):
        return np.einsum('...jk,...jk->...', self.coefficient_values(z),
                         _fiber_monomials(zeta, self.fiber_degree)).real


@dataclass(frozen=True, eq=False)
class FibrationSetup:
    """Rank-2 bundle setup together with the fiber quantization"""

    bundle: BundleSetup
    fiber_degree: int = 1

    def __post_init__(self):
        if self.bundle.rank != 2:
            raise ValueError(f"the fiber of P(E*) is CP^1 only for rank 2, got rank {self.bundle.rank}")

    @classmethod
    def build(cls, degrees, p, fiber_degree=1):
        return cls(round_bundle_setup(degrees, p), fiber_degree)

    @cached_property
    def base(self):
        return round_setup(self.bundle.p)

    @property
    def fiber_rule(self):
        return fiber_rule(self.fiber_degree)

    def describe(self):
        return {**self.bundle.describe(), 'fiber_degree': self.fiber_degree, 'fiber_nodes': len(self.fiber_rule)}


def fiber_symbol(f):
    """T_pi(f) as a unitary-frame endomorphism symbol on the base"""
    mats = fiber_matrices(f.fiber_degree)
    entries = []
    for a in range(2):
        row = []
        for b in range(2):
            total = FrameFunction.constant(0.0)
            for j, coeff_row in enumerate(f.coefficients):
                for k, coeff in enumerate(coeff_row):
                    if mats[j, k, a, b] != 0 and not coeff.is_zero():
                        total = total + coeff * complex(mats[j, k, a, b])
            row.append(total)
        entries.append(row)
    return EndoSymbol(entries, frame='unitary')


def fiber_quantize(setup, f, z):
    """2 x 2 fiber Toeplitz matrix of f(z, .) in the unitary frame of the bundle"""
    return np.einsum('...jk,jkab->...ab', f.coefficient_values(z), fiber_matrices(f.fiber_degree))


def _total_sections(setup, nodes, zeta):
    vt = setup.bundle.sections(nodes)
    vg = fiber_setup(1).sections(zeta)
    return np.einsum('mi,nia->nma', vg, vt)


def total_quantize(setup, f):
    """T_p(f) by iterated quadrature over base and fiber"""
    bundle = setup.bundle
    d = max(f.fiber_degree, 1)
    f = f.lift(d)
    frule = fiber_rule(d)
    zeta = frule.nodes
    wf = frule.weights * round_density(zeta)
    mono = _fiber_monomials(zeta, d)

    def build(rule):
        ev = _total_sections(setup, rule.nodes, zeta)
        fvals = np.einsum('njk,mjk->nm', f.coefficient_values(rule.nodes), mono).real
        weights = bundle.node_weights(rule)[:, None] * wf[None, :] * fvals
        return np.einsum('nm,nma,nmb->ab', weights, ev.conj(), ev, optimize=True)

    return hermitize(bundle.integrate(build, bundle.rule_for(f.base_weight_power)))


def check_functoriality(setup, f):
    """||T_p(f) - T_E(T_pi(f))||_op"""
    total = total_quantize(setup, f)
    staged = bundle_toeplitz(setup.bundle, fiber_symbol(f))
    return float(np.linalg.norm(total - staged, 2))


def _sample_points(rng, samples):
    return (rng.standard_normal(samples) + 1j * rng.standard_normal(samples)) * 1.5


def check_symbol_functoriality(setup, A, samples=None, seed=None, weighted=True):
    """max |T*_p(A)(z,zeta) - Tr[rho T*_E(A)(z) Pi(zeta)] / Tr[rho Pi(zeta)]| over sampled points"""
    samples = Config.SYMBOL_SAMPLES if samples is None else samples
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    z, zeta = _sample_points(rng, samples), _sample_points(rng, samples)
    A = np.asarray(A, dtype=complex)

    bundle = setup.bundle
    vt = bundle.sections(z)
    vg = fiber_setup(1).sections(zeta)
    ev = np.einsum('si,sia->sa', vg, vt)
    lhs = np.einsum('sa,ab,sb->s', ev, A, ev.conj()).real / np.sum(np.abs(ev) ** 2, axis=-1)

    symbol = bundle_berezin_symbol(bundle, A, z)
    proj = coherent_projector(fiber_setup(1), zeta)
    if weighted:
        rho = np.einsum('sia,sja->sij', vt, vt.conj())
        num = np.einsum('sij,sji->s', rho @ symbol, proj)
        rhs = (num / np.einsum('sij,sji->s', rho, proj)).real
    else:
        rhs = np.einsum('sij,sji->s', symbol, proj).real
    return float(np.max(np.abs(lhs - rhs)))


def total_section_count(setup, samples=None, seed=None):
    """Number of linearly independent functions the bundle sections induce on P(E*)

    Each section is evaluated at random points (z, zeta) of the total space; the count is the
    numerical rank of the evaluation matrix.
    """
    dim = setup.bundle.dim
    samples = 2 * dim + 8 if samples is None else samples
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    z, zeta = _sample_points(rng, samples), _sample_points(rng, samples)
    ev = np.einsum('si,sia->sa', fiber_setup(1).sections(zeta), setup.bundle.sections(z))
    ev = ev / np.linalg.norm(ev, axis=-1, keepdims=True)
    count = int(np.linalg.matrix_rank(ev))
    logger.debug(f"Total-space section count {count} from {samples} points (dim {dim})")
    return count


def weak_coupling_residual(setup, f, g, kappa=None):
    """||[T_p f, T_p g] - T_E([F,G]) - (i/2 pi p) T_E(C(F,G))||_op with F, G the fiber quantizations"""
    bundle = setup.bundle
    tf, tg = total_quantize(setup, f), total_quantize(setup, g)
    F, G = fiber_symbol(f), fiber_symbol(g)
    bracket = bundle_toeplitz(bundle, F.commutator(G))
    curvature = bundle_toeplitz(bundle, structure_symbol(bundle, F, G, kappa))
    diff = tf @ tg - tg @ tf - bracket - 1j / (2 * math.pi * bundle.p) * curvature
    residual = float(np.linalg.norm(diff, 2))
    logger.debug(f"Weak-coupling residual at p={bundle.p}: {residual:.3e}")
    return residual
