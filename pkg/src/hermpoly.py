"""
Truncated polynomials in z and conj(z) with Wirtinger calculus
"""

import logging

import numpy as np
from scipy.signal import convolve2d

from src.config import Config
from src.errors import NearZeroDivisionError

logger = logging.getLogger(__name__)


def _points(z):
    return np.asarray(z, dtype=complex)


class BidegreePoly:
    """Dense polynomial sum_{j,k} c_jk z^j conj(z)^k"""

    __slots__ = ('_coeffs',)

    def __init__(self, coeffs):
        coeffs = np.array(coeffs, dtype=complex, ndmin=2)
        if coeffs.ndim != 2 or coeffs.size == 0:
            raise ValueError(f"coefficients must form a non-empty matrix, got shape {coeffs.shape}")
        coeffs.setflags(write=False)
        self._coeffs = coeffs

    @classmethod
    def constant(cls, value):
        return cls([[value]])

    @classmethod
    def monomial(cls, j, k, value=1.0):
        coeffs = np.zeros((j + 1, k + 1), dtype=complex)
        coeffs[j, k] = value
        return cls(coeffs)

    @classmethod
    def one_plus_zzbar(cls):
        return cls([[1.0, 0.0], [0.0, 1.0]])

    @property
    def coeffs(self):
        return self._coeffs

    @property
    def degrees(self):
        d1, d2 = self._coeffs.shape
        return d1 - 1, d2 - 1

    def padded(self, d1, d2):
        """Coefficient matrix zero-padded to shape (d1+1, d2+1)"""
        out = np.zeros((d1 + 1, d2 + 1), dtype=complex)
        a, b = self._coeffs.shape
        out[:a, :b] = self._coeffs
        return out

    def __call__(self, z):
        z = _points(z)
        d1, d2 = self.degrees
        zp = z[..., None] ** np.arange(d1 + 1)
        zbp = np.conj(z)[..., None] ** np.arange(d2 + 1)
        return np.einsum('...j,jk,...k->...', zp, self._coeffs, zbp)

    def __add__(self, other):
        if isinstance(other, FrameFunction):
            return NotImplemented
        if not isinstance(other, BidegreePoly):
            other = BidegreePoly.constant(other)
        d1 = max(self.degrees[0], other.degrees[0])
        d2 = max(self.degrees[1], other.degrees[1])
        return BidegreePoly(self.padded(d1, d2) + other.padded(d1, d2))

    __radd__ = __add__

    def __neg__(self):
        return BidegreePoly(-self._coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FrameFunction):
            return NotImplemented
        if isinstance(other, BidegreePoly):
            return BidegreePoly(convolve2d(self._coeffs, other._coeffs))
        return BidegreePoly(self._coeffs * other)

    __rmul__ = __mul__

    def __pow__(self, n):
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        result = BidegreePoly.constant(1.0)
        for _ in range(n):
            result = result * self
        return result

    def conj(self):
        return BidegreePoly(self._coeffs.conj().T)

    def d_z(self):
        d1, d2 = self.degrees
        if d1 == 0:
            return BidegreePoly(np.zeros((1, d2 + 1)))
        return BidegreePoly(self._coeffs[1:, :] * np.arange(1, d1 + 1)[:, None])

    def d_zbar(self):
        d1, d2 = self.degrees
        if d2 == 0:
            return BidegreePoly(np.zeros((d1 + 1, 1)))
        return BidegreePoly(self._coeffs[:, 1:] * np.arange(1, d2 + 1)[None, :])

    def is_real_valued(self, rtol=1e-14):
        d = max(self.degrees)
        c = self.padded(d, d)
        scale = max(1.0, np.linalg.norm(c))
        return bool(np.all(np.abs(c - c.conj().T) <= rtol * scale))

    def is_zero(self):
        return not np.any(self._coeffs)

    def trimmed(self, rtol=1e-12):
        """Drop trailing rows and columns below rtol times the largest coefficient"""
        c = self._coeffs
        scale = np.max(np.abs(c))
        if scale == 0:
            return BidegreePoly.constant(0.0)
        keep = np.abs(c) > rtol * scale
        rows, cols = np.nonzero(keep)
        return BidegreePoly(np.where(keep, c, 0)[:rows.max() + 1, :cols.max() + 1])

    def divide_one_plus_t(self, rtol=1e-12):
        """Exact quotient by 1 + z conj(z), or None when the remainder does not vanish"""
        c = self._coeffs
        d1, d2 = self.degrees
        if d1 == 0 or d2 == 0:
            return None
        # c_jk = r_jk + r_{j-1,k-1}
        r = np.zeros((d1, d2), dtype=complex)
        for j in range(d1):
            for k in range(d2):
                r[j, k] = c[j, k] - (r[j - 1, k - 1] if j and k else 0.0)
        quotient = BidegreePoly(r)
        remainder = (self - quotient * ONE_PLUS_T).coeffs
        if np.linalg.norm(remainder) > rtol * np.linalg.norm(c):
            return None
        return quotient

    def __repr__(self):
        return f"BidegreePoly(degrees={self.degrees})"


ONE_PLUS_T = BidegreePoly.one_plus_zzbar()
Z = BidegreePoly.monomial(1, 0)
ZBAR = BidegreePoly.monomial(0, 1)


class FrameFunction:
    """numerator(z) / (1 + |z|^2)^weight_power"""

    __slots__ = ('numerator', 'weight_power')

    def __init__(self, numerator, weight_power=0):
        if not isinstance(numerator, BidegreePoly):
            numerator = BidegreePoly(numerator)
        if weight_power < 0:
            raise ValueError(f"weight_power must be nonnegative, got {weight_power}")
        self.numerator = numerator
        self.weight_power = int(weight_power)

    @classmethod
    def constant(cls, value):
        return cls(BidegreePoly.constant(value), 0)

    @classmethod
    def coerce(cls, value):
        if isinstance(value, FrameFunction):
            return value
        if isinstance(value, BidegreePoly):
            return cls(value, 0)
        return cls.constant(value)

    def __call__(self, z):
        z = _points(z)
        return self.numerator(z) / (1.0 + (z * np.conj(z)).real) ** self.weight_power

    def lift(self, m):
        """Same function written over (1+|z|^2)^m"""
        if m < self.weight_power:
            raise ValueError(f"cannot lower weight {self.weight_power} to {m}")
        return FrameFunction(self.numerator * ONE_PLUS_T ** (m - self.weight_power), m)

    def __add__(self, other):
        other = FrameFunction.coerce(other)
        m = max(self.weight_power, other.weight_power)
        return FrameFunction(self.lift(m).numerator + other.lift(m).numerator, m)

    __radd__ = __add__

    def __neg__(self):
        return FrameFunction(-self.numerator, self.weight_power)

    def __sub__(self, other):
        return self + (-FrameFunction.coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (FrameFunction, BidegreePoly)):
            other = FrameFunction.coerce(other)
            return FrameFunction(self.numerator * other.numerator, self.weight_power + other.weight_power)
        return FrameFunction(self.numerator * other, self.weight_power)

    __rmul__ = __mul__

    def conj(self):
        return FrameFunction(self.numerator.conj(), self.weight_power)

    def d_z(self):
        m = self.weight_power
        if m == 0:
            return FrameFunction(self.numerator.d_z(), 0)
        # d(P/(1+t)^m) = (P_z (1+t) - m P zbar) / (1+t)^(m+1)
        return FrameFunction(self.numerator.d_z() * ONE_PLUS_T - self.numerator * ZBAR * m, m + 1)

    def d_zbar(self):
        m = self.weight_power
        if m == 0:
            return FrameFunction(self.numerator.d_zbar(), 0)
        return FrameFunction(self.numerator.d_zbar() * ONE_PLUS_T - self.numerator * Z * m, m + 1)

    def is_real_valued(self, rtol=1e-14):
        return self.numerator.is_real_valued(rtol)

    def is_bounded(self):
        d1, d2 = self.numerator.degrees
        return d1 <= self.weight_power and d2 <= self.weight_power

    def reduced(self, rtol=1e-12):
        """Cancel common factors of 1 + |z|^2 between numerator and denominator"""
        numerator, m = self.numerator.trimmed(rtol), self.weight_power
        if numerator.is_zero():
            return FrameFunction.constant(0.0)
        while m > 0:
            quotient = numerator.divide_one_plus_t(rtol)
            if quotient is None:
                break
            numerator, m = quotient.trimmed(rtol), m - 1
        return FrameFunction(numerator, m)

    def is_zero(self):
        return self.numerator.is_zero()

    def __repr__(self):
        return f"FrameFunction(degrees={self.numerator.degrees}, weight_power={self.weight_power})"


def evaluate(P, z):
    """Value of a BidegreePoly or FrameFunction at z"""
    return P(z)


def add(P, Q):
    return P + Q


def mul(P, Q):
    return P * Q


def d_z(P):
    return P.d_z()


def d_zbar(P):
    return P.d_zbar()


def _check_floor(values, floor):
    floor = Config.DIVISION_FLOOR if floor is None else floor
    small = np.abs(values) < floor
    if np.any(small):
        raise NearZeroDivisionError(
            f"denominator below floor {floor:g} at {int(np.count_nonzero(small))} point(s)",
            {'floor': floor, 'count': int(np.count_nonzero(small))},
        )


def ratio_ddbar_at(P, Q, z, floor=None):
    """d_z d_zbar (P/Q) at z by the quotient rule"""
    z = _points(z)
    q = Q(z)
    _check_floor(q, floor)
    p = P(z)
    p_z, p_zb, p_zzb = P.d_z()(z), P.d_zbar()(z), P.d_z().d_zbar()(z)
    q_z, q_zb, q_zzb = Q.d_z()(z), Q.d_zbar()(z), Q.d_z().d_zbar()(z)
    return (p_zzb / q
            - (p_z * q_zb + p_zb * q_z) / q ** 2
            - p * q_zzb / q ** 2
            + 2.0 * p * q_z * q_zb / q ** 3)


def ddbar_log_at(Q, z, floor=None):
    """d_z d_zbar log Q at z, i.e. (Q Q_zzb - Q_z Q_zb) / Q^2"""
    z = _points(z)
    q = Q(z)
    _check_floor(q, floor)
    q_z, q_zb, q_zzb = Q.d_z()(z), Q.d_zbar()(z), Q.d_z().d_zbar()(z)
    return (q * q_zzb - q_z * q_zb) / q ** 2


def monomial_ratio_ddbar(Q, degree, z, floor=None):
    """d_z d_zbar (z^j conj(z)^k / Q) for all j, k <= degree, shape (..., degree+1, degree+1)"""
    z = _points(z)
    q = Q(z)
    _check_floor(q, floor)
    q_z, q_zb, q_zzb = Q.d_z()(z), Q.d_zbar()(z), Q.d_z().d_zbar()(z)

    j = np.arange(degree + 1)
    zp = z[..., None] ** j
    zbp = np.conj(z)[..., None] ** j
    # derivative powers with zero where the exponent would be negative
    zp_d = np.where(j > 0, j * z[..., None] ** np.maximum(j - 1, 0), 0.0)
    zbp_d = np.where(j > 0, j * np.conj(z)[..., None] ** np.maximum(j - 1, 0), 0.0)

    m = zp[..., :, None] * zbp[..., None, :]
    m_z = zp_d[..., :, None] * zbp[..., None, :]
    m_zb = zp[..., :, None] * zbp_d[..., None, :]
    m_zzb = zp_d[..., :, None] * zbp_d[..., None, :]

    q = q[..., None, None]
    q_z, q_zb, q_zzb = q_z[..., None, None], q_zb[..., None, None], q_zzb[..., None, None]
    return (m_zzb / q
            - (m_z * q_zb + m_zb * q_z) / q ** 2
            - m * q_zzb / q ** 2
            + 2.0 * m * q_z * q_zb / q ** 3)
