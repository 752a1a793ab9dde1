"""Outward-rounded interval, box and interval-matrix arithmetic on binary64.

Rounding errors are recovered exactly with error-free transformations
(TwoSum, Dekker's TwoProduct).  An endpoint is moved one ulp outward only when
the residual says the rounded value landed on the wrong side, so exact
computations (identity maps, dyadic data) stay exact and everything else is
enclosed.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "Interval",
    "Box",
    "IntervalMatrix",
    "box_step",
    "orbit",
    "contains",
    "vertices",
]

_EPS = np.finfo(float).eps
# absolute slack for products that may underflow
_ETA = 2.0 ** -1060


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


_SPLITTER = 134217729.0  # 2**27 + 1


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    # Dekker's residual is only exact away from the underflow range
    tiny = (np.abs(p) < 2.0 ** -900) & (a != 0) & (b != 0)
    e = np.where(tiny, np.where(p >= 0, 1.0, -1.0) * 2.0 ** -900, e)
    return p, e


def _lower(s, err):
    """Largest float <= s + err (err is the exact residual, or a bound on it)."""
    return np.where(err >= 0, s, _down(s))


def _upper(s, err):
    return np.where(err <= 0, s, _up(s))


def _scalar(x):
    return float(x)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if np.isnan(lo) or np.isnan(hi) or lo > hi:
            raise ValueError(f"ill-formed interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x):
        return cls(x, x)

    @classmethod
    def symmetric(cls, r):
        return cls(-r, r)

    @staticmethod
    def _coerce(other):
        return other if isinstance(other, Interval) else Interval.point(other)

    def __add__(self, other):
        o = self._coerce(other)
        lo, elo = _two_sum(self.lo, o.lo)
        hi, ehi = _two_sum(self.hi, o.hi)
        return Interval(_scalar(_lower(lo, elo)), _scalar(_upper(hi, ehi)))

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        a = np.array([self.lo, self.lo, self.hi, self.hi])
        b = np.array([o.lo, o.hi, o.lo, o.hi])
        p, e = _two_prod(a, b)
        lows = _lower(p, e)
        highs = _upper(p, e)
        return Interval(float(lows.min()), float(highs.max()))

    __rmul__ = __mul__

    def __contains__(self, x):
        return self.lo <= x <= self.hi

    def contains(self, other):
        o = self._coerce(other)
        return self.lo <= o.lo and o.hi <= self.hi

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mag(self):
        return max(abs(self.lo), abs(self.hi))

    def hull(self, other):
        o = self._coerce(other)
        return Interval(min(self.lo, o.lo), max(self.hi, o.hi))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned hyper-box ``[lo_i, hi_i]`` per coordinate."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lo))
        hi = _frozen(np.atleast_1d(self.hi))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch(f"box bounds of shape {lo.shape} and {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError(f"ill-formed box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    @classmethod
    def symmetric(cls, r, n=None):
        r = np.asarray(r, dtype=float)
        if n is not None:
            r = np.broadcast_to(r, (n,))
        return cls(-r, r)

    @classmethod
    def from_intervals(cls, intervals):
        return cls([iv.lo for iv in intervals], [iv.hi for iv in intervals])

    @property
    def dim(self):
        return self.lo.shape[0]

    def __len__(self):
        return self.dim

    def __getitem__(self, i):
        return Interval(self.lo[i], self.hi[i])

    def __iter__(self):
        return (self[i] for i in range(self.dim))

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def __repr__(self):
        pairs = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo, self.hi))
        return f"Box({pairs})"

    @property
    def center(self):
        return (self.lo + self.hi) / 2

    @property
    def radius(self):
        return (self.hi - self.lo) / 2

    @property
    def mag(self):
        """Per-coordinate max |x| over the box."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, inner):
        return contains(self, inner)

    def contains_point(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def vertices(self):
        return vertices(self)

    def hull(self, other):
        _check_dims(self, other)
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def __add__(self, other):
        """Minkowski sum."""
        _check_dims(self, other)
        lo, elo = _two_sum(self.lo, other.lo)
        hi, ehi = _two_sum(self.hi, other.hi)
        return Box(_lower(lo, elo), _upper(hi, ehi))

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def _check_dims(a, b):
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} vs {b.dim}")


def contains(outer, inner):
    """Per-coordinate inclusion ``inner ⊆ outer``."""
    _check_dims(outer, inner)
    return bool(np.all(outer.lo <= inner.lo) and np.all(inner.hi <= outer.hi))


def vertices(b):
    """All 2**n corners, lexicographic in (lo, hi) with the first coordinate slowest."""
    return [np.array(v) for v in itertools.product(*zip(b.lo, b.hi))]


@dataclass(frozen=True, eq=False)
class IntervalMatrix:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_2d(self.lo))
        hi = _frozen(np.atleast_2d(self.hi))
        if lo.shape != hi.shape or np.any(lo > hi) or np.any(np.isnan(lo)):
            raise ValueError("ill-formed interval matrix")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_point(cls, M, radius=0.0):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        r = np.broadcast_to(np.asarray(radius, dtype=float), M.shape)
        if np.any(r < 0):
            raise ValueError("negative radius")
        if not np.any(r):
            return cls(M, M)
        return cls(_down(M - r), _up(M + r))

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self):
        return (self.lo + self.hi) / 2

    @property
    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def __add__(self, other):
        other = _as_imat(other)
        lo, elo = _two_sum(self.lo, other.lo)
        hi, ehi = _two_sum(self.hi, other.hi)
        return IntervalMatrix(_lower(lo, elo), _upper(hi, ehi))

    def __neg__(self):
        return IntervalMatrix(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-_as_imat(other))

    def __matmul__(self, other):
        if isinstance(other, Box):
            return self.apply(other)
        return _imatmul(self, _as_imat(other))

    def __rmatmul__(self, other):
        return _imatmul(_as_imat(other), self)

    def apply(self, box):
        """Enclosure of ``{M x : M in self, x in box}``."""
        if self.shape[1] != box.dim:
            raise DimensionMismatch(f"matrix {self.shape} vs box of dim {box.dim}")
        col = IntervalMatrix(box.lo[:, None], box.hi[:, None])
        out = _imatmul(self, col)
        return Box(out.lo[:, 0], out.hi[:, 0])

    def weighted_norm(self, d):
        """Upper bound of the induced norm ``max_i sum_j |m_ij| d_j / d_i``."""
        d = np.asarray(d, dtype=float)
        terms = self.mag * d[None, :]
        n = terms.shape[1]
        s = terms.sum(axis=1)
        s = _up(s + (n + 2) * _EPS * s + n * _ETA)
        ratio = _up(s / d)
        return float(np.max(ratio))


def _as_imat(x):
    if isinstance(x, IntervalMatrix):
        return x
    return IntervalMatrix.from_point(x)


def _pick(p, e, lowest):
    """Select, per entry, the extreme exact product among the 4 candidates.

    Rounding is monotone, so ordering by (p, e) orders the exact values.
    """
    bp, be = p[0], e[0]
    for cp, ce in zip(p[1:], e[1:]):
        if lowest:
            take = (cp < bp) | ((cp == bp) & (ce < be))
        else:
            take = (cp > bp) | ((cp == bp) & (ce > be))
        bp = np.where(take, cp, bp)
        be = np.where(take, ce, be)
    return bp, be


def _enclosed_sum(t, e, lowest):
    """Round ``sum_j (t_j + e_j)`` over axis 1 toward -inf (or +inf)."""
    n = t.shape[1]
    s = t[:, 0, :]
    err = np.abs(e[:, 0, :])
    for j in range(1, n):
        s, r = _two_sum(s, t[:, j, :])
        err = err + np.abs(r) + np.abs(e[:, j, :])
    # err bounds |residual|; inflate for the rounding of err itself
    bound = np.where(err > 0, _up(err * (1 + 4 * (n + 1) * _EPS)), 0.0)
    if lowest:
        return np.where(bound > 0, _down(s - bound), s)
    return np.where(bound > 0, _up(s + bound), s)


def _imatmul(A, B):
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"cannot multiply {A.shape} by {B.shape}")
    a_lo, a_hi = A.lo[:, :, None], A.hi[:, :, None]
    b_lo, b_hi = B.lo[None, :, :], B.hi[None, :, :]
    pairs = [(a_lo, b_lo), (a_lo, b_hi), (a_hi, b_lo), (a_hi, b_hi)]
    ps, es = [], []
    for a, b in pairs:
        a, b = np.broadcast_arrays(a, b)
        p, e = _two_prod(a, b)
        ps.append(p)
        es.append(e)
    t_lo, e_lo = _pick(ps, es, lowest=True)
    t_hi, e_hi = _pick(ps, es, lowest=False)
    return IntervalMatrix(
        _enclosed_sum(t_lo, e_lo, lowest=True),
        _enclosed_sum(t_hi, e_hi, lowest=False),
    )


def box_step(A_cl, x, noise):
    """One interval step ``A_cl x + noise`` (containment, never exactness)."""
    A_cl = _as_imat(A_cl)
    if noise.dim != x.dim:
        raise DimensionMismatch(f"noise dim {noise.dim} vs state dim {x.dim}")
    return A_cl.apply(x) + noise


def powers(A):
    """Enclosures of ``A^0, A^1, A^2, ...`` for a constant matrix in ``A``.

    ``A^k`` is formed as ``A^(k-h) A^h`` with ``h`` the largest power of two
    not above ``k`` (``A^h`` itself by squaring), so every enclosure comes
    from a product tree of depth ``log2 k``.  Iterating ``A @ A^(k-1)``
    instead would also admit time-varying matrices, whose radius can grow
    geometrically even when every member is stable.
    """
    A = _as_imat(A)
    n = A.shape[0]
    seq = [IntervalMatrix.from_point(np.eye(n)), A]
    yield seq[0]
    yield seq[1]
    k, h = 2, 1
    while True:
        if k == 2 * h:
            h = k
            P = seq[h // 2] @ seq[h // 2]
        else:
            P = seq[k - h] @ seq[h]
        seq.append(P)
        yield P
        k += 1


def orbit(A_cl, x0, noise=None):
    """Enclosures of the reachable sets of ``x+ = A x + w`` from ``x0``.

    Yields ``Box_k`` for k = 0, 1, 2, ...  Each box is built from interval
    matrix powers (see :func:`powers`), ``[A^k] x0 + sum_{i<k} [A^i] noise``,
    so the wrapping effect of iterating :func:`box_step` never enters.  ``A_cl`` may be an
    :class:`IntervalMatrix` (an uncertain but constant matrix).
    """
    A = _as_imat(A_cl)
    n = x0.dim
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix {A.shape} vs box of dim {n}")
    if noise is not None and noise.dim != n:
        raise DimensionMismatch(f"noise dim {noise.dim} vs state dim {n}")
    acc = Box.point(np.zeros(n))
    for power in powers(A):
        yield power.apply(x0) + acc
        if noise is not None:
            acc = acc + power.apply(noise)
