"""Exact fixed-point arithmetic in a <I, F> format.

Values are stored as scaled integers (``raw * 2**-F``).  Every rounding is a
truncation toward zero on the last fractional bit, so the error left behind by
a conversion always has the sign of the converted number and magnitude below
``c_m = 2**-F``.

The scalar helpers ``mul_raw``/``add_raw`` only use integer operators so they
can be compiled by numba in the exhaustive tests; the ``*_array`` variants are
the numpy kernels used by the simulators.
"""

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import DivisorTooSmall, Overflow

__all__ = [
    "FixedFormat",
    "FixedValue",
    "quantize",
    "quantize_array",
    "fp_add",
    "fp_sub",
    "fp_mul",
    "fp_div_error_bound",
    "dot_fixed",
    "mul_raw",
    "add_raw",
    "mul_raw_array",
    "matvec_raw",
    "dot_raw_array",
]


@dataclass(frozen=True, order=True)
class FixedFormat:
    """Word layout with ``int_bits`` integer and ``frac_bits`` fraction bits."""

    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 1 or self.frac_bits < 0:
            raise ValueError(f"invalid format <{self.int_bits},{self.frac_bits}>")

    @property
    def scale(self):
        return 1 << self.frac_bits

    @property
    def cm(self):
        """Smallest positive representable number, 2**-F."""
        return Fraction(1, self.scale)

    @property
    def max_value(self):
        # range quoted for the format: +-(2^(I-1) + 1 - 2^-F)
        return Fraction(2 ** (self.int_bits - 1) + 1) - self.cm

    @property
    def max_raw(self):
        return (2 ** (self.int_bits - 1) + 1) * self.scale - 1

    def __str__(self):
        return f"<{self.int_bits},{self.frac_bits}>"

    def to_dict(self):
        return {"I": self.int_bits, "F": self.frac_bits}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["I"]), int(d["F"]))


@dataclass(frozen=True)
class FixedValue:
    raw: int
    fmt: FixedFormat

    def __post_init__(self):
        if abs(self.raw) > self.fmt.max_raw:
            raise Overflow(f"raw value {self.raw} outside {self.fmt}")

    @classmethod
    def from_real(cls, x, fmt):
        return quantize(x, fmt)[0]

    @property
    def value(self):
        return Fraction(self.raw, self.fmt.scale)

    def __float__(self):
        return self.raw / self.fmt.scale

    def __neg__(self):
        return FixedValue(-self.raw, self.fmt)

    def __add__(self, other):
        return fp_add(self, other)

    def __sub__(self, other):
        return fp_sub(self, other)

    def __mul__(self, other):
        return fp_mul(self, other)

    def __repr__(self):
        return f"FixedValue({float(self)!r}, {self.fmt})"


def _as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, FixedValue):
        return x.value
    if isinstance(x, str):
        return Fraction(x)
    xf = float(x)
    if not np.isfinite(xf):
        raise Overflow(f"cannot represent non-finite value {x!r}")
    return Fraction(xf)


def _trunc_div(p, shift):
    """Integer division by 2**shift rounding toward zero."""
    q = abs(p) >> shift
    return q if p >= 0 else -q


def quantize(x, fmt):
    """Truncate a real number to ``fmt``.

    Returns the fixed-point value and the truncation error ``x - value``,
    which is exact (a Fraction).
    """
    xq = _as_fraction(x)
    if abs(xq) > fmt.max_value:
        raise Overflow(f"{float(xq)!r} exceeds the range of {fmt}")
    # int() on a Fraction truncates toward zero
    raw = int(xq * fmt.scale)
    v = FixedValue(raw, fmt)
    return v, xq - v.value


def quantize_array(x, fmt):
    """Vectorized truncation of float data to raw int64 words."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise Overflow("non-finite value in quantize_array")
    if np.any(np.abs(x) > float(fmt.max_value)):
        raise Overflow(f"value exceeds the range of {fmt}")
    # scaling by a power of two is exact in binary64, so is trunc
    return np.trunc(x * fmt.scale).astype(np.int64)


def _same_format(a, b):
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch {a.fmt} vs {b.fmt}")
    return a.fmt


def add_raw(a, b, max_raw):
    s = a + b
    if s > max_raw or s < -max_raw:
        raise OverflowError("fixed-point sum out of range")
    return s


def mul_raw(a, b, frac_bits):
    """Product of two raw words, truncated back to ``frac_bits``."""
    p = a * b
    q = abs(p) >> frac_bits
    if p < 0:
        return -q
    return q


def fp_add(a, b):
    fmt = _same_format(a, b)
    s = a.raw + b.raw
    if abs(s) > fmt.max_raw:
        raise Overflow(f"sum {float(a)} + {float(b)} overflows {fmt}")
    return FixedValue(s, fmt)


def fp_sub(a, b):
    return fp_add(a, -b)


def fp_mul(a, b):
    fmt = _same_format(a, b)
    r = mul_raw(a.raw, b.raw, fmt.frac_bits)
    if abs(r) > fmt.max_raw:
        raise Overflow(f"product {float(a)} * {float(b)} overflows {fmt}")
    return FixedValue(r, fmt)


def fp_div_error_bound(c1, c2, dt1, dt2):
    """Worst-case error of dividing two truncated operands.

    Evaluates |(dt2*c1 - dt1*c2) / (dt2**2 - dt2*c2)|.  The expression is
    undefined for an exact divisor (``dt2 == 0``); there the error is exactly
    ``|dt1 / c2|`` and that is returned instead.
    """
    c1, c2, dt1, dt2 = (_as_fraction(v) for v in (c1, c2, dt1, dt2))
    if c2 == 0:
        raise DivisorTooSmall("division by zero")
    if abs(dt2) >= abs(c2):
        raise DivisorTooSmall(f"truncation error {float(dt2)} not below divisor {float(c2)}")
    if dt2 == 0:
        return abs(dt1 / c2)
    return abs((dt2 * c1 - dt1 * c2) / (dt2 * dt2 - dt2 * c2))


def dot_fixed(K, x):
    """Fixed-point inner product ``sum(K[i] * x[i])``, ascending index order.

    Returns ``(u, bound)`` where ``bound`` is the worst-case distance between
    ``u`` and the exact product of the given (already representable)
    operands: one ``c_m`` per multiplication, additions are exact.
    """
    gains = getattr(K, "gains", K)
    gains = list(gains)
    x = list(x)
    if len(gains) != len(x):
        raise ValueError(f"length mismatch {len(gains)} vs {len(x)}")
    if not gains:
        raise ValueError("empty dot product")
    fmt = gains[0].fmt
    acc = fp_mul(gains[0], x[0])
    for k_i, x_i in zip(gains[1:], x[1:]):
        acc = fp_add(acc, fp_mul(k_i, x_i))
    return acc, len(gains) * fmt.cm


# -- numpy kernels -----------------------------------------------------------

_SAFE_PRODUCT = 1 << 62


def mul_raw_array(a, b, frac_bits):
    """Elementwise truncated product of raw arrays (broadcasting)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype != object and b.dtype != object:
        amax = int(np.max(np.abs(a), initial=0))
        bmax = int(np.max(np.abs(b), initial=0))
        if amax * bmax >= _SAFE_PRODUCT:
            a = a.astype(object)
            b = b.astype(object)
    p = a * b
    if p.dtype == object:
        return np.vectorize(lambda v: _trunc_div(int(v), frac_bits), otypes=[object])(p)
    q = np.abs(p) >> frac_bits
    return np.where(p < 0, -q, q)


def matvec_raw(M, X, frac_bits, max_raw=None):
    """``M @ X`` on raw words with per-product truncation.

    ``M`` is (r, n), ``X`` is (n, V).  Partial sums are accumulated left to
    right; with ``max_raw`` set, every partial sum is range-checked.
    """
    M = np.asarray(M)
    X = np.asarray(X)
    prods = mul_raw_array(M[:, :, None], X[None, :, :], frac_bits)
    acc = prods[:, 0, :]
    if max_raw is not None and np.any(np.abs(acc) > max_raw):
        raise Overflow("product out of range")
    for j in range(1, prods.shape[1]):
        acc = acc + prods[:, j, :]
        if max_raw is not None and np.any(np.abs(acc) > max_raw):
            raise Overflow("partial sum out of range")
    return acc


def dot_raw_array(k_raw, X, frac_bits, max_raw=None):
    """Vectorized :func:`dot_fixed` over the columns of ``X`` (raw words)."""
    return matvec_raw(np.asarray(k_raw)[None, :], X, frac_bits, max_raw)[0]
