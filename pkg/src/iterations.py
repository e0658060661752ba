"""
Donaldson iterations for balanced products and their linearization at fixed points
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from src.bundles import (
    BundleSetup, BundleSpec, ProductFiberMetric, bundle_berezin_operator, bundle_hilb, bundle_rawnsley,
)
from src.config import Config
from src.errors import ConvergenceError, NumericalError, PositivityError, ValidationError
from src.geometry import LiouvilleOfFS, Measure, RoundLiouville, laplace_beltrami_at
from src.hermpoly import BidegreePoly, ddbar_log_at
from src.quantization import (
    QuantumSetup, Superoperator, berezin_operator, default_rule, fs, hermitize, hilb_of, monomials,
    rawnsley, round_product,
)

logger = logging.getLogger(__name__)

NU_BALANCED = 'nu'
CANONICAL = 'canonical'
TRACE_GAUGE = 'trace'
DET_GAUGE = 'det'
ANALYTIC = 'analytic'
FINITE_DIFFERENCE = 'fd'


@dataclass
class IterationConfig:
    """Which Donaldson map to iterate and when to stop"""

    variant: str = NU_BALANCED
    p: int = 4
    bundle: BundleSpec = field(default_factory=lambda: BundleSpec((0,)))
    measure: Measure = field(default_factory=RoundLiouville)
    tol_fixed: float = None
    max_iters: int = None
    normalization: str = None

    def __post_init__(self):
        if not isinstance(self.bundle, BundleSpec):
            self.bundle = BundleSpec(tuple(self.bundle))
        if self.tol_fixed is None:
            self.tol_fixed = Config.TOL_FIXED
        if self.max_iters is None:
            self.max_iters = Config.MAX_ITERS
        if self.normalization is None:
            self.normalization = Config.GAUGE
        self.validate()

    def validate(self):
        errors = []

        if self.variant not in (NU_BALANCED, CANONICAL):
            errors.append(f"variant must be '{NU_BALANCED}' or '{CANONICAL}', got {self.variant!r}")

        if self.p < 0:
            errors.append(f"p must be nonnegative, got {self.p}")
        elif self.p + min(self.bundle.degrees) < 0:
            errors.append(f"p={self.p} is below -min(degrees)")

        if self.variant == CANONICAL:
            if self.bundle.rank != 1:
                errors.append("the canonical variant is defined for line bundles only")
            elif self.p + self.bundle.degrees[0] < 1:
                errors.append("the canonical variant needs effective level >= 1")

        if self.normalization not in (TRACE_GAUGE, DET_GAUGE):
            errors.append(f"normalization must be '{TRACE_GAUGE}' or '{DET_GAUGE}', got {self.normalization!r}")

        if self.tol_fixed <= 0:
            errors.append("tol_fixed must be positive")

        if self.max_iters < 1:
            errors.append("max_iters must be at least 1")

        if errors:
            raise ValidationError(f"Iteration config errors: {', '.join(errors)}")

    @property
    def rank(self):
        return self.bundle.rank

    @property
    def is_scalar(self):
        return self.bundle.rank == 1

    @property
    def level(self):
        """Effective level of the line bundle O(p + a) in the scalar case"""
        return self.p + self.bundle.degrees[0]

    @property
    def dim(self):
        return self.bundle.dim(self.p)

    def describe(self):
        return {
            'variant': self.variant,
            'p': self.p,
            'degrees': list(self.bundle.degrees),
            'measure': self.measure.describe(),
            'tol_fixed': self.tol_fixed,
            'max_iters': self.max_iters,
            'gauge': self.normalization,
        }


@dataclass
class IterationTrace:
    distances: list = field(default_factory=list)
    gauge_factors: list = field(default_factory=list)
    block_ratios: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    rate: float = None
    rate_spread: float = None
    failure: dict = None

    def to_dict(self):
        return {
            'distances': [float(d) for d in self.distances],
            'gauge_factors': [float(c) for c in self.gauge_factors],
            'block_ratios': [float(r) for r in self.block_ratios],
            'converged': self.converged,
            'iterations': self.iterations,
            'rate': self.rate,
            'rate_spread': self.rate_spread,
            'failure': self.failure,
        }


@dataclass
class JacobianReport:
    eigenvalues: np.ndarray
    neutral_dim: int
    beta: float
    mode: str
    operator: Superoperator = field(repr=False, default=None)
    deviation: float = None

    def to_dict(self):
        return {
            'eigenvalues': [float(v) for v in self.eigenvalues],
            'neutral_dim': self.neutral_dim,
            'beta': self.beta,
            'mode': self.mode,
            'deviation': self.deviation,
        }


def random_product(dim, seed=None, delta=None):
    """L L^dagger + delta Id for a complex Gaussian L"""
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    delta = Config.RANDOM_DELTA if delta is None else delta
    lower = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2 * dim)
    return hermitize(lower @ lower.conj().T + delta * np.eye(dim))


def balanced_product(spec, p):
    """Blockwise round fixed point diag(1/C(p + a_i, j))"""
    spec = spec if isinstance(spec, BundleSpec) else BundleSpec(tuple(spec))
    return linalg.block_diag(*[round_product(p + a) for a in spec.degrees])


def prod_distance(q1, q2):
    """Affine-invariant distance ||log(q1^-1/2 q2 q1^-1/2)||_F"""
    try:
        values = linalg.eigh(hermitize(q2), hermitize(q1), eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise PositivityError(f"distance needs positive definite products: {exc}") from exc
    if np.any(values <= 0):
        raise PositivityError("distance needs positive definite products", {'min_eigenvalue': float(values.min())})
    return float(np.sqrt(np.sum(np.log(values) ** 2)))


def step_setup(q, cfg, rule=None, adaptive=True):
    """Quantization setup carrying FS(q) and the variant's measure"""
    q = np.asarray(q, dtype=complex)
    if q.shape != (cfg.dim, cfg.dim):
        raise ValueError(f"product of shape {q.shape} does not match dim {cfg.dim}")
    if cfg.is_scalar:
        n = cfg.level
        measure = LiouvilleOfFS(q, n) if cfg.variant == CANONICAL else cfg.measure
        return QuantumSetup(n, fs(q, n), measure, rule, adaptive)
    return BundleSetup(cfg.bundle, cfg.p, ProductFiberMetric(q, cfg.bundle, cfg.p), cfg.measure, rule, adaptive)


def raw_step(q, cfg, rule=None, adaptive=True):
    """Hilb(FS(q)) before gauge normalization"""
    setup = step_setup(q, cfg, rule, adaptive)
    return hermitize(hilb_of(setup) if cfg.is_scalar else bundle_hilb(setup))


def _gauge(q, cfg):
    if cfg.normalization == TRACE_GAUGE:
        factor = cfg.dim / float(np.trace(q).real)
    else:
        _, target = np.linalg.slogdet(balanced_product(cfg.bundle, cfg.p))
        sign, current = np.linalg.slogdet(q)
        if sign.real <= 0:
            raise PositivityError("product has nonpositive determinant")
        factor = math.exp((target - current) / cfg.dim)
    return q * factor, factor


def donaldson_step(q, cfg, rule=None):
    """One gauge-normalized step of the Donaldson map"""
    return _gauge(raw_step(q, cfg, rule), cfg)[0]


def block_ratio(q, cfg):
    """max/min over blocks of tr(q_ii) / dim_i"""
    if cfg.is_scalar:
        return 1.0
    means = [float(np.trace(q[b, b]).real) / (b.stop - b.start) for b in cfg.bundle.blocks(cfg.p)]
    return max(means) / min(means)


def estimate_rate(distances, window=None):
    """Geometric mean of the tail ratios d_{r+1}/d_r and their relative spread"""
    window = Config.RATE_WINDOW if window is None else window
    d = np.asarray([x for x in distances if x > 0], dtype=float)
    if len(d) < 3:
        return None, None
    tail = d[-(window + 1):]
    ratios = tail[1:] / tail[:-1]
    rate = float(np.exp(np.mean(np.log(ratios))))
    return rate, float((ratios.max() - ratios.min()) / rate)


def iterate_to_fixed_point(q0, cfg, rule=None):
    """Iterate the normalized Donaldson map from q0; non-convergence is reported in the trace"""
    q = _gauge(hermitize(q0), cfg)[0]
    trace = IterationTrace()

    for it in range(1, cfg.max_iters + 1):
        try:
            new, factor = _gauge(raw_step(q, cfg, rule), cfg)
            distance = prod_distance(q, new)
        except NumericalError as exc:
            logger.warning(f"Iteration stopped at step {it}: {exc}")
            trace.failure = {'step': it, 'error': type(exc).__name__, 'message': str(exc), **exc.diagnostics}
            break

        q = new
        ratio = block_ratio(q, cfg)
        trace.distances.append(distance)
        trace.gauge_factors.append(factor)
        trace.block_ratios.append(ratio)
        trace.iterations = it

        if distance < cfg.tol_fixed:
            trace.converged = True
            break
        if ratio > Config.DIVERGENCE_RATIO:
            logger.warning(f"Block ratio {ratio:.3e} exceeds {Config.DIVERGENCE_RATIO:g} at step {it}")
            trace.failure = {'step': it, 'error': 'divergence', 'block_ratio': ratio}
            break

    trace.rate, trace.rate_spread = estimate_rate(trace.distances)
    if trace.converged:
        logger.info(f"Converged after {trace.iterations} steps, rate {trace.rate}")
    else:
        logger.warning(f"No convergence after {trace.iterations} steps (last distance "
                       f"{trace.distances[-1] if trace.distances else float('nan'):.3e})")
    return q, trace


def fixed_point_certificate(q, cfg, rule=None):
    """Step distance at q and flatness max ||rho - rho_bar Id|| / rho_bar of the Rawnsley density"""
    setup = step_setup(q, cfg, rule)
    distance = prod_distance(q, raw_step(q, cfg, rule))
    nodes = setup.rule.nodes
    rho_bar = setup.dim / (setup.volume * cfg.rank)
    if cfg.is_scalar:
        flatness = np.max(np.abs(rawnsley(setup, nodes) - rho_bar))
    else:
        rho = bundle_rawnsley(setup, nodes)
        flatness = np.max(np.linalg.norm(rho - rho_bar * np.eye(cfg.rank), ord=2, axis=(-2, -1)))
    return {'distance': distance, 'rho_flatness': float(flatness / rho_bar)}


def hermitian_basis(dim):
    """Frobenius-orthonormal basis E_jj, (E_jk + E_kj)/sqrt2, i(E_jk - E_kj)/sqrt2"""
    basis = []
    for j in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[j, j] = 1.0
        basis.append(e)
    for j in range(dim):
        for k in range(j + 1, dim):
            s = np.zeros((dim, dim), dtype=complex)
            s[j, k] = s[k, j] = 1 / math.sqrt(2)
            a = np.zeros((dim, dim), dtype=complex)
            a[j, k], a[k, j] = 1j / math.sqrt(2), -1j / math.sqrt(2)
            basis.extend([s, a])
    return basis


def _basis_matrix(dim):
    return np.stack([e.reshape(-1) for e in hermitian_basis(dim)], axis=1)


def _canonical_jacobian(setup):
    # pointwise coefficient of A_ab: Pi_ba plus the measure variation Delta((e A e^dagger) / K) / 4 pi
    coeffs = setup.on_coefficients
    kernel = BidegreePoly(coeffs @ coeffs.conj().T)
    numerators = np.einsum('ja,kb->abjk', coeffs, coeffs.conj())

    def build(rule):
        e = setup.sections(rule.nodes)
        sigma = setup.measure.density(rule.nodes)
        wt = rule.weights * sigma
        rho = np.sum(np.abs(e) ** 2, axis=-1)
        outer = e.conj()[:, :, None] * e[:, None, :]
        phi = np.swapaxes(outer, 1, 2) / rho[:, None, None]
        phi = phi + laplace_beltrami_at(sigma, (numerators, kernel), rule.nodes) / (4 * math.pi)
        return (outer.reshape(len(wt), -1) * wt[:, None]).T @ phi.reshape(len(wt), -1)

    return Superoperator.full(hermitize(setup.integrate(build)), setup.dim)


def analytic_jacobian(q, cfg, rule=None):
    """Linearization at a fixed point: the Berezin operator, plus the measure term for the canonical map"""
    setup = step_setup(q, cfg, rule)
    if cfg.variant == CANONICAL:
        return _canonical_jacobian(setup)
    if cfg.is_scalar:
        return berezin_operator(setup)
    return bundle_berezin_operator(setup)


def _frozen_rule(cfg, rule=None):
    if rule is not None:
        return rule
    return default_rule(cfg.p + max(cfg.bundle.degrees)).refined()


def _central_difference(q, lower, direction, cfg, rule, h):
    eye = np.eye(len(q))
    plus = lower @ (eye + h * direction) @ lower.conj().T
    minus = lower @ (eye - h * direction) @ lower.conj().T
    diff = (raw_step(plus, cfg, rule, adaptive=False) - raw_step(minus, cfg, rule, adaptive=False)) / (2 * h)
    left = linalg.solve_triangular(lower, diff, lower=True)
    return linalg.solve_triangular(lower, left.conj().T, lower=True).conj().T


def _fd_column(q, lower, direction, cfg, rule, step, refinements):
    h = step
    for _ in range(Config.FD_MAX_SHRINKS + 1):
        try:
            estimates = [_central_difference(q, lower, direction, cfg, rule, h / 2 ** i)
                         for i in range(refinements + 1)]
            break
        except PositivityError:
            logger.debug(f"Finite-difference step {h:g} left the positive cone, shrinking")
            h /= 2
    else:
        raise ConvergenceError(f"finite differences failed after {Config.FD_MAX_SHRINKS} step shrinks",
                               {'last_step': h})
    # Richardson tableau for O(h^2) central differences
    for level in range(1, len(estimates)):
        factor = 4 ** level
        estimates = [(factor * estimates[i + 1] - estimates[i]) / (factor - 1) for i in range(len(estimates) - 1)]
    return estimates[0].reshape(-1)


def fd_jacobian_matrix(q, cfg, rule=None, step=None, refinements=None):
    """Real matrix of D(raw_step) in q-orthonormal coordinates on the Hermitian basis"""
    step = Config.FD_STEP if step is None else step
    refinements = Config.FD_REFINEMENTS if refinements is None else refinements
    rule = _frozen_rule(cfg, rule)
    q = hermitize(q)
    try:
        lower = linalg.cholesky(q, lower=True)
    except linalg.LinAlgError as exc:
        raise PositivityError(f"product is not positive definite: {exc}") from exc

    basis = hermitian_basis(len(q))
    columns = Parallel(n_jobs=Config.THREADS, prefer='threads')(
        delayed(_fd_column)(q, lower, direction, cfg, rule, step, refinements) for direction in basis
    )
    b = _basis_matrix(len(q))
    return np.real(b.conj().T @ np.stack(columns, axis=1))


def _herm_matrix(operator):
    b = _basis_matrix(operator.dim)
    return np.real(b.conj().T @ operator.matrix() @ b)


def _rate_from_eigenvalues(values, tol):
    neutral = values >= 1.0 - tol
    below = values[~neutral]
    if not below.size:
        logger.warning("No Jacobian eigenvalue below the neutral cluster")
        return None, int(np.count_nonzero(neutral))
    return float(below[0]), int(np.count_nonzero(neutral))


def jacobian_at(q, cfg, mode=ANALYTIC, rule=None):
    """Jacobian of the raw Donaldson map at a fixed point q"""
    if mode == ANALYTIC:
        operator = analytic_jacobian(q, cfg, rule)
        values = operator.eigenvalues()
        beta, neutral = _rate_from_eigenvalues(values, Config.NEUTRAL_TOL)
        return JacobianReport(values, neutral, beta, mode, operator)

    if mode != FINITE_DIFFERENCE:
        raise ValueError(f"unknown Jacobian mode {mode!r}")
    matrix = fd_jacobian_matrix(q, cfg, rule)
    b = _basis_matrix(cfg.dim)
    operator = Superoperator.full(b @ ((matrix + matrix.T) / 2) @ b.conj().T, cfg.dim)
    values = operator.eigenvalues()
    beta, neutral = _rate_from_eigenvalues(values, Config.FD_NEUTRAL_TOL)
    deviation = float(np.linalg.norm(matrix - _herm_matrix(analytic_jacobian(q, cfg)), 2))
    logger.info(f"Finite-difference Jacobian at dim {cfg.dim}: deviation from analytic {deviation:.3e}")
    return JacobianReport(values, neutral, beta, mode, operator, deviation)


def contraction_rate(q, cfg, mode=ANALYTIC):
    """(beta, neutral_dim) of the Jacobian at a fixed point"""
    report = jacobian_at(q, cfg, mode)
    return report.beta, report.neutral_dim


def _evaluation_rows(setup, z):
    """Chart-frame evaluation in the setup's orthonormal coordinates, shape (n, r, dim)"""
    if isinstance(setup, QuantumSetup):
        return (monomials(z, setup.p) @ setup.on_coefficients)[:, None, :]
    return setup.spec.evaluation(z, setup.p) @ setup.on_coefficients


def moment_map(g, q_hat, cfg, rule=None):
    """Integral of the projectors onto G applied to the evaluation lines, over nu or FS(G)'s Liouville measure"""
    g = np.asarray(g, dtype=complex)
    rule = _frozen_rule(cfg, rule)
    setup = step_setup(q_hat, cfg, rule, adaptive=False)
    nodes = rule.nodes
    e = _evaluation_rows(setup, nodes)
    m = g @ np.swapaxes(e.conj(), -1, -2)
    m_dag = np.swapaxes(m.conj(), -1, -2)
    proj = m @ np.linalg.solve(m_dag @ m, m_dag)
    if cfg.variant == CANONICAL:
        coeffs = setup.on_coefficients
        kernel = BidegreePoly(coeffs @ g.conj().T @ g @ coeffs.conj().T)
        density = ddbar_log_at(kernel, nodes).real
    else:
        density = cfg.measure.density(nodes)
    return hermitize(np.tensordot(rule.weights * density, proj, axes=(0, 0)))


def moment_identity_at_identity(q_hat, cfg, rule=None):
    """||mu(Id) - (Vol rk / dim) Id||_op at a balanced q_hat"""
    rule = _frozen_rule(cfg, rule)
    setup = step_setup(q_hat, cfg, rule, adaptive=False)
    mu = moment_map(np.eye(cfg.dim), q_hat, cfg, rule)
    expected = setup.volume * cfg.rank / cfg.dim
    return float(np.linalg.norm(mu - expected * np.eye(cfg.dim), 2))


def check_moment_identity(q_hat, cfg, tests=None, step=None, seed=None, rule=None):
    """max over random Hermitian A of ||(dim/(Vol rk)) D mu(A) - (A - J(A))||"""
    tests = Config.MOMENT_TESTS if tests is None else tests
    step = Config.FD_STEP if step is None else step
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    rule = _frozen_rule(cfg, rule)

    setup = step_setup(q_hat, cfg, rule, adaptive=False)
    scale = cfg.dim / (setup.volume * cfg.rank)
    jacobian = analytic_jacobian(q_hat, cfg)

    worst = 0.0
    for _ in range(tests):
        x = rng.standard_normal((cfg.dim, cfg.dim)) + 1j * rng.standard_normal((cfg.dim, cfg.dim))
        a = hermitize(x)
        a /= np.linalg.norm(a)
        plus = moment_map(linalg.expm(step * a / 2), q_hat, cfg, rule)
        minus = moment_map(linalg.expm(-step * a / 2), q_hat, cfg, rule)
        dmu = (plus - minus) / (2 * step)
        residual = float(np.linalg.norm(scale * dmu - (a - jacobian.apply(a)), 2))
        worst = max(worst, residual)
    logger.info(f"Moment identity residual for {cfg.variant} at p={cfg.p}: {worst:.3e}")
    return worst
