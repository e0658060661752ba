"""
Scalar Berezin-Toeplitz quantization on CP^1
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy
from scipy import linalg
from scipy.special import comb, gammaln
from sklearn.linear_model import LinearRegression

from src import __version__
from src.config import Config
from src.errors import PositivityError
from src.geometry import (
    X1, X2, MetricWeight, RoundLiouville, constants_ledger, integrate,
    integrate_adaptive, make_quadrature, poisson_bracket,
)
from src.hermpoly import FrameFunction

logger = logging.getLogger(__name__)


def monomials(z, degree):
    z = np.asarray(z, dtype=complex)
    return z[..., None] ** np.arange(degree + 1)


def default_rule(level):
    """Rule covering bidegree `level` integrands with the configured safety margin"""
    margin = Config.QUADRATURE_MARGIN
    return make_quadrature(2 * level + 2 + margin, 2 * level + margin)


def hermitize(a):
    a = np.asarray(a, dtype=complex)
    return (a + a.conj().T) / 2


def cholesky_on_basis(gram_matrix, what='Gram matrix'):
    """Coefficients C = L^-dagger of an orthonormal basis for G = L L^dagger"""
    try:
        lower = linalg.cholesky(gram_matrix, lower=True)
    except linalg.LinAlgError:
        smallest = float(linalg.eigvalsh(gram_matrix)[0])
        raise PositivityError(
            f"{what} is not positive definite (smallest eigenvalue {smallest:.3e}); refine the quadrature",
            {'smallest_eigenvalue': smallest},
        )
    eye = np.eye(len(gram_matrix))
    return linalg.solve_triangular(lower, eye, lower=True).conj().T


@dataclass(frozen=True, eq=False)
class QuantumSetup:
    """Level p, metric weight, measure and quadrature rule"""

    p: int
    metric: MetricWeight
    measure: object = field(default_factory=RoundLiouville)
    rule: object = None
    adaptive: bool = True

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"level must be nonnegative, got {self.p}")
        if self.metric.level != self.p:
            raise ValueError(f"metric level {self.metric.level} does not match p={self.p}")
        if self.rule is None:
            object.__setattr__(self, 'rule', default_rule(self.p))

    @property
    def dim(self):
        return self.p + 1

    @property
    def is_symmetric(self):
        return self.metric.is_round and self.measure.is_symmetric

    def integrate(self, build, rule=None):
        rule = rule or self.rule
        if self.is_symmetric or not self.adaptive:
            return build(rule)
        value, _ = integrate_adaptive(build, rule)
        return value

    def rule_for(self, weight_power):
        """Rule exact for a symbol of the given weight against this setup's integrands"""
        m, d = self.p + weight_power + 2, self.p + weight_power
        if self.rule.covers(m, d):
            return self.rule
        return make_quadrature(max(m, self.rule.exact_weight_power), max(d, self.rule.exact_bidegree))

    def node_data(self, rule):
        """Quadrature weights times density, and metric weights, at the rule's nodes"""
        wt = rule.weights * self.measure.density(rule.nodes)
        return wt, self.metric(rule.nodes)

    @cached_property
    def gram_matrix(self):
        return gram(self)

    @cached_property
    def on_coefficients(self):
        return cholesky_on_basis(self.gram_matrix)

    @cached_property
    def volume(self):
        return float(np.real(self.integrate(lambda rule: np.asarray(self.measure.mass(rule)))))

    def sections(self, z):
        """Orthonormal sections in the unitary frame of w, rows over points"""
        z = np.asarray(z, dtype=complex)
        return (monomials(z, self.p) @ self.on_coefficients) * np.sqrt(self.metric(z))[..., None]

    def describe(self):
        return {
            'p': self.p,
            'dim': self.dim,
            'metric': self.metric.describe(),
            'measure': self.measure.describe(),
            'nodes': len(self.rule),
        }


def round_setup(p, rule=None):
    return QuantumSetup(p, MetricWeight.round(p), RoundLiouville(), rule)


def gram(setup):
    """G_jk = integral of conj(z^j) z^k w dnu (antilinear first slot)"""
    def build(rule):
        m = monomials(rule.nodes, setup.p)
        wt, w = setup.node_data(rule)
        return (m.conj() * (wt * w)[:, None]).T @ m

    g = hermitize(setup.integrate(build))
    cholesky_on_basis(g)
    return g


def hilb(metric, measure, p, rule=None, adaptive=True):
    """(dim H_p / Vol) * Gram"""
    setup = QuantumSetup(p, metric, measure, rule, adaptive)
    return hilb_of(setup)


def hilb_of(setup):
    vol = setup.volume
    if vol <= 0:
        raise ValueError(f"measure has no mass (Vol={vol:.3e}); the canonical variant needs p >= 1")
    return setup.dim / vol * setup.gram_matrix


def fs(q, p):
    """Fubini-Study weight 1/K_q"""
    q = np.asarray(q, dtype=complex)
    if q.shape != (p + 1, p + 1):
        raise ValueError(f"product of shape {q.shape} does not match level {p}")
    return MetricWeight.from_product(q, p)


def round_product(p):
    """Round balanced product diag(1/C(p, j))"""
    return np.diag(1.0 / comb(p, np.arange(p + 1))).astype(complex)


def berezin_eigenvalue(k, p):
    """p!(p+1)! / ((p-k)!(p+k+1)!), multiplicity 2k+1"""
    return math.exp(gammaln(p + 1) + gammaln(p + 2) - gammaln(p - k + 1) - gammaln(p + k + 2))


def _toeplitz_values(setup, values_fn, rule):
    def build(r):
        vt = setup.sections(r.nodes)
        wt = r.weights * setup.measure.density(r.nodes)
        return (vt.conj() * (wt * values_fn(r.nodes))[:, None]).T @ vt

    return setup.integrate(build, rule)


def toeplitz(setup, f):
    """T(f)_ab = <e_a, f e_b> in the orthonormal basis"""
    f = FrameFunction.coerce(f)
    if not f.is_real_valued():
        raise ValueError("Toeplitz quantization needs a real-valued symbol")
    if not f.is_bounded():
        raise ValueError(f"symbol {f!r} is unbounded on the chart")
    rule = setup.rule_for(f.weight_power)
    return hermitize(_toeplitz_values(setup, lambda z: f(z).real, rule))


def rawnsley(setup, z):
    vt = setup.sections(z)
    return np.sum(np.abs(vt) ** 2, axis=-1)


def coherent_projector(setup, z):
    """Rank-one projector conj(v)^T v / rho, shape (..., N, N)"""
    vt = setup.sections(z)
    rho = np.sum(np.abs(vt) ** 2, axis=-1)
    return vt.conj()[..., :, None] * vt[..., None, :] / rho[..., None, None]


def berezin_symbol(setup, A, z):
    """tr(Pi(z) A)"""
    vt = setup.sections(z)
    rho = np.sum(np.abs(vt) ** 2, axis=-1)
    return (np.einsum('...a,ab,...b->...', vt, np.asarray(A), vt.conj()) / rho).real


def berezin_transform_at(setup, f, z):
    """Integral of f(y) tr(Pi(z) Pi(y)) rho(y) dnu(y)"""
    f = FrameFunction.coerce(f)
    vz = setup.sections(z)
    rule = setup.rule_for(f.weight_power)

    def build(r):
        vy = setup.sections(r.nodes)
        wt = r.weights * setup.measure.density(r.nodes)
        overlap = np.abs(np.atleast_2d(vz).conj() @ vy.T) ** 2
        return overlap @ (wt * f(r.nodes).real)

    rho_z = np.atleast_1d(np.sum(np.abs(vz) ** 2, axis=-1))
    value = setup.integrate(build, rule).real / rho_z
    return value.reshape(np.shape(z))


def povm_resolution(setup):
    """Integral of rho Pi dnu, the identity for a unital quantization"""
    def build(r):
        vt = setup.sections(r.nodes)
        wt = r.weights * setup.measure.density(r.nodes)
        return (vt.conj() * wt[:, None]).T @ vt

    return hermitize(setup.integrate(build))


def weighted_inner(setup, f, g):
    """Integral of f g rho dnu"""
    f, g = FrameFunction.coerce(f), FrameFunction.coerce(g)
    rule = setup.rule_for(f.weight_power + g.weight_power)

    def build(r):
        wt = r.weights * setup.measure.density(r.nodes)
        return np.sum(wt * f(r.nodes).real * g(r.nodes).real * rawnsley(setup, r.nodes))

    return float(np.real(setup.integrate(build, rule)))


def duality_residual(setup, f, A):
    """|Tr[T(f) A] - integral of f T*(A) rho dnu|"""
    f = FrameFunction.coerce(f)
    A = hermitize(A)
    lhs = np.trace(toeplitz(setup, f) @ A).real
    rule = setup.rule_for(f.weight_power)

    def build(r):
        wt = r.weights * setup.measure.density(r.nodes)
        return np.sum(wt * f(r.nodes).real * berezin_symbol(setup, A, r.nodes) * rawnsley(setup, r.nodes))

    rhs = float(np.real(setup.integrate(build, rule)))
    return abs(lhs - rhs)


def assemble_superoperator(X, Y, wt):
    """Matrix of A -> sum_n wt_n X_n A Y_n on row-major vec blocks"""
    n, na, nb = X.shape
    _, nc, nd = Y.shape
    m = (X.reshape(n, -1) * wt[:, None]).T @ Y.reshape(n, -1)
    return m.reshape(na, nb, nc, nd).transpose(0, 3, 1, 2).reshape(na * nd, nb * nc)


@dataclass(eq=False)
class Superoperator:
    """Block-diagonal linear map on End(C^dim); each block acts on A[rows, cols]"""

    dim: int
    blocks: list

    @classmethod
    def full(cls, matrix, dim):
        return cls(dim, [(slice(0, dim), slice(0, dim), matrix)])

    def apply(self, A):
        A = np.asarray(A, dtype=complex)
        out = np.zeros_like(A)
        for rows, cols, matrix in self.blocks:
            sub = A[rows, cols]
            out[rows, cols] = (matrix @ sub.reshape(-1)).reshape(sub.shape)
        return out

    def matrix(self):
        n = self.dim
        full = np.zeros((n * n, n * n), dtype=complex)
        index = np.arange(n * n).reshape(n, n)
        for rows, cols, matrix in self.blocks:
            idx = index[rows, cols].reshape(-1)
            full[np.ix_(idx, idx)] = matrix
        return full

    def eigenvalues(self):
        values = [linalg.eigvalsh(hermitize(matrix)) for _, _, matrix in self.blocks]
        return np.sort(np.concatenate(values))[::-1]


def berezin_operator(setup):
    """C(A) = integral of tr(Pi A) rho Pi dnu"""
    def build(rule):
        vt = setup.sections(rule.nodes)
        wt = rule.weights * setup.measure.density(rule.nodes)
        rho = np.sum(np.abs(vt) ** 2, axis=-1)
        outer = vt.conj()[:, :, None] * vt[:, None, :]
        return assemble_superoperator(outer / rho[:, None, None], outer, wt)

    return Superoperator.full(hermitize(setup.integrate(build)), setup.dim)


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    levels: list
    multiplicities: list
    tolerance: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'eigenvalues': [float(v) for v in self.eigenvalues],
            'levels': [float(v) for v in self.levels],
            'multiplicities': [int(m) for m in self.multiplicities],
            'tolerance': self.tolerance,
            **self.metadata,
            'constants': constants_ledger(),
            'versions': versions(),
        }


def versions():
    return {'berezin_lab': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__}


def cluster_levels(values, rtol=None):
    """Group a decreasing list into (level, multiplicity) at relative gap rtol"""
    rtol = Config.CLUSTER_RTOL if rtol is None else rtol
    levels, mults = [], []
    for v in values:
        if levels and abs(v - levels[-1]) <= rtol * max(1.0, abs(levels[-1])):
            mults[-1] += 1
        else:
            levels.append(float(v))
            mults.append(1)
    return levels, mults


def clamp_negative(values, floor=None):
    floor = Config.NEGATIVE_EIGENVALUE_FLOOR if floor is None else floor
    values = np.array(values, dtype=float)
    tiny = (values < 0) & (values >= -floor)
    values[tiny] = 0.0
    if np.any(values < -floor):
        logger.warning(f"Eigenvalue below -{floor:g} kept unclamped: {values.min():.3e}")
    return values


def spectrum_report(operator, metadata, rtol=None):
    rtol = Config.CLUSTER_RTOL if rtol is None else rtol
    values = clamp_negative(operator.eigenvalues())
    levels, mults = cluster_levels(values, rtol)
    return SpectrumReport(values, levels, mults, rtol, dict(metadata))


def berezin_spectrum(setup):
    report = spectrum_report(berezin_operator(setup), {"p": setup.p, "setup": setup.describe()})
    logger.info(f"Berezin spectrum at p={setup.p}: {len(report.levels)} levels, gamma_1={report.levels[1] if len(report.levels) > 1 else None}")
    return report


def commutator_residual(setup, f, g, kappa=None):
    """||[T(f),T(g)] - (i/2 pi p) T({f,g})||_op"""
    tf, tg = toeplitz(setup, f), toeplitz(setup, g)
    bracket = toeplitz(setup, poisson_bracket(f, g, kappa))
    diff = tf @ tg - tg @ tf - 1j / (2 * math.pi * setup.p) * bracket
    return float(np.linalg.norm(diff, 2))


def fit_poisson_constant(p=None):
    """Sign of kappa_P = +-2 pi with the smaller first-order residual for x1, x2"""
    p = Config.POISSON_CALIBRATION_LEVEL if p is None else p
    setup = round_setup(p)
    candidates = (2 * math.pi, -2 * math.pi)
    residuals = [commutator_residual(setup, X1, X2, kappa) for kappa in candidates]
    best = candidates[int(np.argmin(residuals))]
    logger.info(f"Poisson constant at p={p}: {best:+.6f} (residuals {residuals[0]:.3e}, {residuals[1]:.3e})")
    return best


def fit_inverse_power(ps, values, power):
    """C in values ~ C / p^power by least squares"""
    ps = np.asarray(ps, dtype=float)
    features = (ps ** -power).reshape(-1, 1)
    model = LinearRegression(fit_intercept=False).fit(features, np.asarray(values, dtype=float))
    return float(model.coef_[0])


def bergman_coefficients(ps, z=0.0):
    """Fit rho_p(z)/p ~ b0 + b1/p over round setups"""
    ps = np.asarray(ps, dtype=int)
    ratios = [float(rawnsley(round_setup(int(p)), z)) / p for p in ps]
    model = LinearRegression().fit((1.0 / ps).reshape(-1, 1), ratios)
    return float(model.intercept_), float(model.coef_[0])


def gap_table(ps):
    """Rows of gamma_1 and the second-order residual 1 - gamma_1 - 2/p + 4/p^2"""
    rows = []
    for p in ps:
        report = berezin_spectrum(round_setup(p))
        gamma1 = report.levels[1]
        residual = 1.0 - gamma1 - 2.0 / p + 4.0 / p ** 2
        rows.append({
            'p': int(p),
            'gamma1': gamma1,
            'one_minus_gamma1': 1.0 - gamma1,
            'residual': residual,
            'p3_residual': p ** 3 * residual,
        })
    return rows
