"""
Berezin-Toeplitz quantization of split bundles O(a_1) + ... + O(a_r) on CP^1
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from src.config import Config
from src.errors import PositivityError
from src.geometry import RoundLiouville, integrate_adaptive, laplacian_eigenvalue, make_quadrature, round_density
from src.hermpoly import ONE_PLUS_T, BidegreePoly, FrameFunction
from src.quantization import (
    Superoperator, assemble_superoperator, cholesky_on_basis, cluster_levels, default_rule, fit_inverse_power,
    hermitize, monomials, spectrum_report,
)

logger = logging.getLogger(__name__)

CASIMIR = 'casimir'
MAIN = 'main'


@dataclass(frozen=True)
class BundleSpec:
    degrees: tuple

    def __post_init__(self):
        degrees = tuple(int(a) for a in self.degrees)
        if not degrees:
            raise ValueError("a bundle needs at least one summand")
        object.__setattr__(self, 'degrees', degrees)

    @classmethod
    def parse(cls, text):
        try:
            return cls(tuple(int(item) for item in str(text).split(',') if item.strip()))
        except ValueError as exc:
            raise ValueError(f"invalid degree list {text!r}: {exc}") from exc

    @property
    def rank(self):
        return len(self.degrees)

    def validate_level(self, p):
        if p + min(self.degrees) < 0:
            raise ValueError(f"level p={p} is below -min(degrees)={-min(self.degrees)}")

    def levels(self, p):
        return [p + a for a in self.degrees]

    def block_sizes(self, p):
        return [p + a + 1 for a in self.degrees]

    def offsets(self, p):
        return np.concatenate([[0], np.cumsum(self.block_sizes(p))]).astype(int)

    def blocks(self, p):
        off = self.offsets(p)
        return [slice(int(off[i]), int(off[i + 1])) for i in range(self.rank)]

    def dim(self, p):
        return sum(self.block_sizes(p))

    def evaluation(self, z, p):
        """Chart-frame evaluation matrix V(z), shape (..., r, dim)"""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (self.rank, self.dim(p)), dtype=complex)
        for i, block in enumerate(self.blocks(p)):
            out[..., i, block] = monomials(z, p + self.degrees[i])
        return out


class FrameFiberMetric:
    """W(z) = W_E(z) (1+|z|^2)^-p with W_E an r x r matrix of FrameFunctions"""

    def __init__(self, entries, level, is_round=False):
        self.entries = tuple(tuple(FrameFunction.coerce(e) for e in row) for row in entries)
        self.level = level
        self.is_round = is_round
        self.rank = len(self.entries)

    @classmethod
    def round(cls, spec, level):
        entries = [[FrameFunction.constant(0.0)] * spec.rank for _ in range(spec.rank)]
        for i, a in enumerate(spec.degrees):
            entries[i][i] = FrameFunction(BidegreePoly.constant(1.0), a) if a >= 0 else FrameFunction(ONE_PLUS_T ** (-a), 0)
        return cls(entries, level, is_round=True)

    @property
    def is_diagonal(self):
        return all(self.entries[i][j].is_zero() for i in range(self.rank) for j in range(self.rank) if i != j)

    def fiber_values(self, z):
        z = np.asarray(z, dtype=complex)
        return np.stack([np.stack([e(z) for e in row], axis=-1) for row in self.entries], axis=-2)

    def values(self, z):
        z = np.asarray(z, dtype=complex)
        level = (1.0 + (z * np.conj(z)).real) ** -self.level
        return self.fiber_values(z) * level[..., None, None]

    def derivative_values(self, z):
        """(d_z W_E, d_zbar W_E) at z"""
        z = np.asarray(z, dtype=complex)
        dz = np.stack([np.stack([e.d_z()(z) for e in row], axis=-1) for row in self.entries], axis=-2)
        dzb = np.stack([np.stack([e.d_zbar()(z) for e in row], axis=-1) for row in self.entries], axis=-2)
        return dz, dzb

    def describe(self):
        return {'kind': 'round' if self.is_round else 'frame', 'level': self.level}


class ProductFiberMetric:
    """Fubini-Study pullback W_q = (V q^-1 V^dagger)^-1"""

    is_round = False

    def __init__(self, q, spec, level):
        q = np.asarray(q, dtype=complex)
        n = spec.dim(level)
        if q.shape != (n, n):
            raise ValueError(f"product of shape {q.shape} does not match dim {n}")
        self.q = q
        self.spec = spec
        self.level = level
        self.rank = spec.rank
        self.qinv = np.linalg.inv(q)
        blocks = spec.blocks(level)
        self.is_diagonal = all(
            not np.any(q[bi, bj]) for i, bi in enumerate(blocks) for j, bj in enumerate(blocks) if i != j
        )

    def values(self, z):
        z = np.asarray(z, dtype=complex)
        if self.is_diagonal:
            out = np.zeros(z.shape + (self.rank, self.rank), dtype=complex)
            for i, block in enumerate(self.spec.blocks(self.level)):
                m = monomials(z, self.level + self.spec.degrees[i])
                k = np.einsum('...j,jk,...k->...', m, self.qinv[block, block], m.conj()).real
                if np.any(k <= Config.DIVISION_FLOOR):
                    raise PositivityError("Fubini-Study kernel vanishes: evaluation is not surjective")
                out[..., i, i] = 1.0 / k
            return out
        v = self.spec.evaluation(z, self.level)
        kernel = v @ self.qinv @ np.swapaxes(v.conj(), -1, -2)
        try:
            return np.linalg.inv(hermitize_stack(kernel))
        except np.linalg.LinAlgError as exc:
            raise PositivityError(f"evaluation map is not surjective: {exc}") from exc

    def describe(self):
        return {'kind': 'fubini_study', 'level': self.level}


def hermitize_stack(a):
    return (a + np.swapaxes(a.conj(), -1, -2)) / 2


@dataclass(frozen=True, eq=False)
class BundleSetup:
    spec: BundleSpec
    p: int
    fiber_metric: object = None
    measure: object = field(default_factory=RoundLiouville)
    rule: object = None
    adaptive: bool = True

    def __post_init__(self):
        self.spec.validate_level(self.p)
        if self.fiber_metric is None:
            object.__setattr__(self, 'fiber_metric', FrameFiberMetric.round(self.spec, self.p))
        if self.fiber_metric.level != self.p:
            raise ValueError(f"fiber metric level {self.fiber_metric.level} does not match p={self.p}")
        if self.rule is None:
            object.__setattr__(self, 'rule', default_rule(self.p + max(self.spec.degrees)))

    @property
    def rank(self):
        return self.spec.rank

    @property
    def dim(self):
        return self.spec.dim(self.p)

    @property
    def is_diagonal(self):
        return self.fiber_metric.is_diagonal

    @property
    def is_symmetric(self):
        return self.fiber_metric.is_round and self.measure.is_symmetric

    def integrate(self, build, rule=None):
        rule = rule or self.rule
        if self.is_symmetric or not self.adaptive:
            return build(rule)
        value, _ = integrate_adaptive(build, rule)
        return value

    def rule_for(self, weight_power):
        n = self.p + max(self.spec.degrees)
        m, d = n + weight_power + 2, n + weight_power
        if self.rule.covers(m, d):
            return self.rule
        return make_quadrature(max(m, self.rule.exact_weight_power), max(d, self.rule.exact_bidegree))

    def with_fiber_metric(self, fiber_metric, measure=None, rule=None, adaptive=None):
        return BundleSetup(self.spec, self.p, fiber_metric, measure or self.measure,
                           rule or self.rule, self.adaptive if adaptive is None else adaptive)

    def node_weights(self, rule):
        return rule.weights * self.measure.density(rule.nodes)

    def unitary_frame(self, z):
        """R with W = R^dagger R"""
        w = self.fiber_metric.values(z)
        if self.is_diagonal:
            diag = np.diagonal(w, axis1=-2, axis2=-1).real
            if np.any(diag <= 0):
                raise PositivityError("fiber metric is not positive")
            return np.sqrt(diag)[..., :, None] * np.eye(self.rank)
        try:
            lower = np.linalg.cholesky(hermitize_stack(w))
        except np.linalg.LinAlgError as exc:
            raise PositivityError(f"fiber metric is not positive definite: {exc}") from exc
        return np.swapaxes(lower.conj(), -1, -2)

    @cached_property
    def gram_matrix(self):
        return bundle_gram(self)

    @cached_property
    def on_coefficients(self):
        return cholesky_on_basis(self.gram_matrix)

    @cached_property
    def volume(self):
        return float(np.real(self.integrate(lambda rule: np.asarray(self.measure.mass(rule)))))

    def sections(self, z):
        """Orthonormal basis in a unitary frame, shape (..., r, dim)"""
        z = np.asarray(z, dtype=complex)
        return self.unitary_frame(z) @ self.spec.evaluation(z, self.p) @ self.on_coefficients

    def describe(self):
        return {
            'p': self.p,
            'bundle_degrees': list(self.spec.degrees),
            'dim': self.dim,
            'fiber_metric': self.fiber_metric.describe(),
            'measure': self.measure.describe(),
            'nodes': len(self.rule),
        }


def round_bundle_setup(degrees, p, rule=None):
    spec = degrees if isinstance(degrees, BundleSpec) else BundleSpec(tuple(degrees))
    return BundleSetup(spec, p, rule=rule)


def bundle_gram(setup):
    spec, p = setup.spec, setup.p

    def build(rule):
        wt = setup.node_weights(rule)
        w = setup.fiber_metric.values(rule.nodes)
        if setup.rank == 1:
            m = monomials(rule.nodes, p + spec.degrees[0])
            return (m.conj() * (wt * w[:, 0, 0].real)[:, None]).T @ m
        if setup.is_diagonal:
            g = np.zeros((setup.dim, setup.dim), dtype=complex)
            for i, block in enumerate(spec.blocks(p)):
                m = monomials(rule.nodes, p + spec.degrees[i])
                g[block, block] = (m.conj() * (wt * w[:, i, i].real)[:, None]).T @ m
            return g
        v = spec.evaluation(rule.nodes, p)
        return np.einsum('n,nia,nij,njb->ab', wt, v.conj(), w, v, optimize=True)

    g = hermitize(setup.integrate(build))
    cholesky_on_basis(g, 'bundle Gram matrix')
    return g


def bundle_hilb(setup):
    """(dim H_p / (Vol r)) * Gram"""
    vol = setup.volume
    if vol <= 0:
        raise ValueError(f"measure has no mass (Vol={vol:.3e})")
    return setup.dim / (vol * setup.rank) * setup.gram_matrix


def bundle_fs(q, setup):
    return ProductFiberMetric(q, setup.spec, setup.p)


class EndoSymbol:
    """r x r endomorphism-valued symbol in the chart frame or the unitary frame"""

    def __init__(self, entries=None, frame='chart', values_fn=None, rank=None, weight_power=0):
        if frame not in ('chart', 'unitary'):
            raise ValueError(f"unknown frame {frame!r}")
        self.frame = frame
        self._values_fn = values_fn
        if entries is not None:
            self.entries = tuple(tuple(FrameFunction.coerce(e) for e in row) for row in entries)
            self.rank = len(self.entries)
            self.weight_power = max(e.weight_power for row in self.entries for e in row)
        else:
            if values_fn is None or rank is None:
                raise ValueError("a pointwise symbol needs values_fn and rank")
            self.entries = None
            self.rank = rank
            self.weight_power = weight_power

    @classmethod
    def diagonal(cls, functions, frame='chart'):
        r = len(functions)
        zero = FrameFunction.constant(0.0)
        return cls([[functions[i] if i == j else zero for j in range(r)] for i in range(r)], frame)

    @classmethod
    def scalar(cls, f, rank, frame='chart'):
        return cls.diagonal([f] * rank, frame)

    @classmethod
    def constant(cls, matrix, frame='chart'):
        matrix = np.asarray(matrix, dtype=complex)
        return cls([[FrameFunction.constant(v) for v in row] for row in matrix], frame)

    @classmethod
    def pointwise(cls, values_fn, rank, frame='chart', weight_power=0):
        return cls(None, frame, values_fn, rank, weight_power)

    @classmethod
    def coerce(cls, value, rank):
        if isinstance(value, EndoSymbol):
            if value.rank != rank:
                raise ValueError(f"symbol rank {value.rank} does not match bundle rank {rank}")
            return value
        return cls.scalar(FrameFunction.coerce(value), rank)

    @property
    def is_differentiable(self):
        return self.entries is not None

    def values(self, z):
        z = np.asarray(z, dtype=complex)
        if self.entries is None:
            return np.asarray(self._values_fn(z), dtype=complex)
        return np.stack([np.stack([e(z) for e in row], axis=-1) for row in self.entries], axis=-2)

    def _map(self, fn):
        if self.entries is None:
            raise ValueError("pointwise symbols cannot be differentiated")
        return EndoSymbol([[fn(e) for e in row] for row in self.entries], self.frame)

    def d_z(self):
        return self._map(lambda e: e.d_z())

    def d_zbar(self):
        return self._map(lambda e: e.d_zbar())

    def _check_compatible(self, other):
        if not (self.is_differentiable and other.is_differentiable):
            raise ValueError("symbol algebra needs FrameFunction entries")
        if self.frame != other.frame or self.rank != other.rank:
            raise ValueError("symbols live in different frames or ranks")

    def __add__(self, other):
        self._check_compatible(other)
        return EndoSymbol([[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)], self.frame)

    def __sub__(self, other):
        self._check_compatible(other)
        return EndoSymbol([[a - b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)], self.frame)

    def __matmul__(self, other):
        self._check_compatible(other)
        r = self.rank
        entries = []
        for i in range(r):
            row = []
            for j in range(r):
                total = FrameFunction.constant(0.0)
                for k in range(r):
                    a, b = self.entries[i][k], other.entries[k][j]
                    if not (a.is_zero() or b.is_zero()):
                        total = total + a * b
                row.append(total)
            entries.append(row)
        return EndoSymbol(entries, self.frame)

    def commutator(self, other):
        return self @ other - other @ self


def _unitary_values(setup, F, z):
    values = F.values(z)
    if F.frame == 'unitary':
        return values
    frame = setup.unitary_frame(z)
    return frame @ values @ np.linalg.inv(frame)


def _check_hermitian(values):
    gap = np.linalg.norm(values - np.swapaxes(values.conj(), -1, -2), axis=(-2, -1))
    scale = np.maximum(1.0, np.linalg.norm(values, axis=(-2, -1)))
    if np.any(gap > Config.HERMITIAN_RTOL * scale):
        raise ValueError(f"symbol is not Hermitian for the fiber metric (max defect {gap.max():.3e})")


def bundle_toeplitz(setup, F):
    """T(F) = integral of V~^dagger F~ V~ dnu in the orthonormal basis"""
    F = EndoSymbol.coerce(F, setup.rank)
    rule = setup.rule_for(F.weight_power)

    def build(r):
        vt = setup.sections(r.nodes)
        fv = _unitary_values(setup, F, r.nodes)
        _check_hermitian(fv)
        return np.einsum('n,nia,nij,njb->ab', setup.node_weights(r), vt.conj(), fv, vt, optimize=True)

    return hermitize(setup.integrate(build, rule))


def bundle_rawnsley(setup, z):
    vt = setup.sections(z)
    return np.einsum('...ia,...ja->...ij', vt, vt.conj())


def rawnsley_trace_mass(setup):
    """Integral of Tr rho dnu"""
    def build(rule):
        vt = setup.sections(rule.nodes)
        return np.sum(setup.node_weights(rule) * np.sum(np.abs(vt) ** 2, axis=(-2, -1)))

    return float(np.real(setup.integrate(build)))


def bundle_berezin_symbol(setup, A, z, frame='unitary'):
    """rho^-1 V~ A V~^dagger"""
    vt = setup.sections(z)
    rho = np.einsum('...ia,...ja->...ij', vt, vt.conj())
    value = np.linalg.solve(rho, vt @ np.asarray(A) @ np.swapaxes(vt.conj(), -1, -2))
    if frame == 'chart':
        r = setup.unitary_frame(z)
        value = np.linalg.inv(r) @ value @ r
    return value


def bundle_berezin_operator(setup):
    """C_E(A) = integral of V~^dagger rho^-1 V~ A V~^dagger V~ dnu"""
    if setup.is_diagonal:
        return _block_berezin_operator(setup)

    def build(rule):
        vt = setup.sections(rule.nodes)
        rho = np.einsum('nia,nja->nij', vt, vt.conj())
        x = np.swapaxes(vt.conj(), -1, -2) @ np.linalg.solve(rho, vt)
        y = np.swapaxes(vt.conj(), -1, -2) @ vt
        return assemble_superoperator(x, y, setup.node_weights(rule))

    return Superoperator.full(hermitize(setup.integrate(build)), setup.dim)


def _block_berezin_operator(setup):
    blocks = setup.spec.blocks(setup.p)
    sizes = [b.stop - b.start for b in blocks]
    pairs = [(i, j) for i in range(setup.rank) for j in range(setup.rank)]

    def build(rule):
        vt = setup.sections(rule.nodes)
        wt = setup.node_weights(rule)
        xs, ys = [], []
        for i, block in enumerate(blocks):
            v = vt[:, i, block]
            outer = v.conj()[:, :, None] * v[:, None, :]
            rho = np.sum(np.abs(v) ** 2, axis=-1)
            xs.append(outer / rho[:, None, None])
            ys.append(outer)
        return np.concatenate([assemble_superoperator(xs[i], ys[j], wt).ravel() for i, j in pairs])

    flat = setup.integrate(build)
    out, start = [], 0
    for i, j in pairs:
        n = sizes[i] * sizes[j]
        out.append((blocks[i], blocks[j], hermitize(flat[start:start + n * n].reshape(n, n))))
        start += n * n
    return Superoperator(setup.dim, out)


def bundle_berezin_spectrum(setup):
    report = spectrum_report(bundle_berezin_operator(setup), {
        'p': setup.p,
        'bundle_degrees': list(setup.spec.degrees),
        'setup': setup.describe(),
    })
    logger.info(f"Bundle Berezin spectrum for degrees {setup.spec.degrees} at p={setup.p}: {len(report.levels)} levels")
    return report


def split_berezin_levels(k, p):
    """Exact Berezin spectrum of O(0)+O(k), product round metric: (gamma, multiplicity, block)"""
    def lg(x):
        return gammaln(x + 1)

    rows = []
    for j in range(p + 1):
        rows.append((math.exp(lg(p) + lg(p + 1) - lg(p - j) - lg(p + j + 1)), 2 * j + 1, '11'))
    for j in range(p + k + 1):
        n = p + k
        rows.append((math.exp(lg(n) + lg(n + 1) - lg(n - j) - lg(n + j + 1)), 2 * j + 1, '22'))
    for j in range(p + 1):
        rows.append((math.exp(lg(p) + lg(p + k + 1) - lg(p + k + j + 1) - lg(p - j)), k + 2 * j + 1, '12'))
        rows.append((math.exp(lg(p + 1) + lg(p + k) - lg(p + k + j + 1) - lg(p - j)), k + 2 * j + 1, '21'))
    return sorted(rows, key=lambda row: -row[0])


KAPPA = laplacian_eigenvalue(1) / 4.0


def kodaira_components(k, terms):
    """(2 S_0, S_k, S_-k) as lists of (value, multiplicity) in Casimir units"""
    k = abs(k)
    s0 = [(2 * j * (j + 1), 2 * (2 * j + 1)) for j in range(terms)]
    sk = [(2 * j * k + 2 * j * (j + 1), k + 2 * j + 1) for j in range(terms)]
    smk = [(2 * (j + 1) * k + 2 * j * (j + 1), k + 2 * j + 1) for j in range(terms)]
    return s0, sk, smk


def kodaira_spectrum_oracle(k, count):
    """First `count` eigenvalues of the Kodaira Laplacian on End(O(0)+O(k)), both unit systems"""
    if count < 1:
        raise ValueError("count must be at least 1")
    merged = {}
    for component in kodaira_components(k, count + abs(k) + 2):
        for value, mult in component:
            merged[value] = merged.get(value, 0) + mult
    levels = sorted(merged.items())[:count]
    return [{CASIMIR: float(v), MAIN: KAPPA * v, 'multiplicity': m} for v, m in levels]


def casimir_values(report, p):
    """2p(1 - gamma) in increasing order"""
    return np.sort(2.0 * p * (1.0 - np.asarray(report.eigenvalues)))


def casimir_levels(report, p, count, rtol=None):
    """First `count` distinct values of 2p(1 - gamma) at relative gap rtol, as (level, multiplicity)"""
    levels, mults = cluster_levels(casimir_values(report, p), rtol)
    return list(zip(levels, mults))[:count]


def oracle_level_match(report, p, k, count, rtol=None):
    """Sorted 2p(1 - gamma) cut into the first `count` oracle levels by multiplicity

    Each row carries the exact finite-p levels inside the cut and whether the cut ends
    between two distinct levels. At finite p an oracle level can be the union of several
    exact levels that only merge as p grows.
    """
    rtol = Config.CLUSTER_RTOL if rtol is None else rtol
    values = casimir_values(report, p)
    rows, start = [], 0
    for level in kodaira_spectrum_oracle(k, count):
        stop = start + level['multiplicity']
        if stop > len(values):
            raise ValueError(f"spectrum of dimension {len(values)} is too short for {count} oracle levels")
        group = values[start:stop]
        sublevels, mults = cluster_levels(group, rtol)
        aligned = stop == len(values) or values[stop] - values[stop - 1] > rtol * max(1.0, abs(values[stop - 1]))
        rows.append({
            'oracle': level[CASIMIR],
            'multiplicity': level['multiplicity'],
            'mean': float(np.mean(group)),
            'spread': float(group[-1] - group[0]),
            'sublevels': [{'value': v, 'multiplicity': m} for v, m in zip(sublevels, mults)],
            'aligned': bool(aligned),
        })
        start = stop
    return rows


def multiplicities_match(report, p, k, count, rtol=None):
    """True when every oracle cut ends between two distinct exact levels"""
    return all(row['aligned'] for row in oracle_level_match(report, p, k, count, rtol))


def gap_deviation(report, p, k, count):
    """max over the first `count` oracle levels of 2 pi |x - lambda| elementwise"""
    oracle = kodaira_spectrum_oracle(k, count)
    expected = np.concatenate([[level[CASIMIR]] * level['multiplicity'] for level in oracle])
    measured = casimir_values(report, p)[:len(expected)]
    return float(KAPPA * np.max(np.abs(measured - expected)))


def gap_law_constant(k, ps, count=4):
    """C in gap_deviation ~ C / p over round O(0)+O(k) setups; returns (C, deviations)"""
    deviations = [gap_deviation(bundle_berezin_spectrum(round_bundle_setup((0, k), p)), p, k, count) for p in ps]
    constant = fit_inverse_power(ps, deviations, 1)
    logger.info(f"Gap law for O(0)+O({k}) over p={list(ps)}: C={constant:.4f}")
    return constant, deviations


def weitzenbock_gap(report, p, k, count=4):
    """(extracted, oracle) smallest positive eigenvalue in main units"""
    positive = [row for row in oracle_level_match(report, p, k, count) if row['oracle'] > 0]
    if not positive:
        return None, None
    return KAPPA * positive[0]['mean'], KAPPA * positive[0]['oracle']


def _connection_terms(setup, F, z):
    """Covariant derivatives (nabla_z F, nabla_zbar F) at z"""
    metric = setup.fiber_metric
    if not isinstance(metric, FrameFiberMetric):
        raise ValueError("structure coefficients need a fiber metric given by frame functions")
    values = F.values(z)
    dz, dzb = F.d_z().values(z), F.d_zbar().values(z)
    w = metric.fiber_values(z)
    w_z, w_zb = metric.derivative_values(z)
    if F.frame == 'chart':
        theta = np.linalg.solve(w, w_z)
        return dz + theta @ values - values @ theta, dzb
    if not metric.is_diagonal:
        raise ValueError("unitary-frame symbols need a diagonal fiber metric")
    diag = np.diagonal(w, axis1=-2, axis2=-1)
    half = np.diagonal(w_z, axis1=-2, axis2=-1) / diag / 2
    half_bar = np.diagonal(w_zb, axis1=-2, axis2=-1) / diag / 2
    comm = half[..., :, None] - half[..., None, :]
    comm_bar = half_bar[..., :, None] - half_bar[..., None, :]
    return dz + comm * values, dzb - comm_bar * values


def structure_coefficient(setup, F, G, z, kappa=None):
    """kappa_P (i / sigma)(nabla_z F nabla_zbar G - nabla_z G nabla_zbar F)"""
    kappa = Config.POISSON_CONSTANT if kappa is None else kappa
    F, G = EndoSymbol.coerce(F, setup.rank), EndoSymbol.coerce(G, setup.rank)
    if F.frame != G.frame:
        raise ValueError("symbols live in different frames")
    z = np.asarray(z, dtype=complex)
    fz, fzb = _connection_terms(setup, F, z)
    gz, gzb = _connection_terms(setup, G, z)
    sigma = round_density(z)[..., None, None]
    return kappa * 1j * (fz @ gzb - gz @ fzb) / sigma


def structure_symbol(setup, F, G, kappa=None):
    """C(F, G) as a pointwise symbol"""
    F, G = EndoSymbol.coerce(F, setup.rank), EndoSymbol.coerce(G, setup.rank)
    return EndoSymbol.pointwise(lambda z: structure_coefficient(setup, F, G, z, kappa),
                                setup.rank, F.frame, F.weight_power + G.weight_power)


def cocycle_residual(setup, F, G, H, z, kappa=None):
    """Max norm of the cyclic sum [C(F,G),H] + C([F,G],H) over (F,G,H)"""
    z = np.asarray(z, dtype=complex)
    total = 0
    for a, b, c in ((F, G, H), (H, F, G), (G, H, F)):
        cab = structure_coefficient(setup, a, b, z, kappa)
        cv = c.values(z)
        total = total + cab @ cv - cv @ cab + structure_coefficient(setup, a.commutator(b), c, z, kappa)
    return float(np.max(np.linalg.norm(total, axis=(-2, -1))))


def bundle_commutator_residual(setup, F, G, kappa=None):
    """||[T(F),T(G)] - T([F,G]) - (i/2 pi p) T(C(F,G))||_op"""
    tf, tg = bundle_toeplitz(setup, F), bundle_toeplitz(setup, G)
    tc = bundle_toeplitz(setup, structure_symbol(setup, F, G, kappa))
    diff = tf @ tg - tg @ tf - bundle_toeplitz(setup, F.commutator(G)) - 1j / (2 * math.pi * setup.p) * tc
    return float(np.linalg.norm(diff, 2))
