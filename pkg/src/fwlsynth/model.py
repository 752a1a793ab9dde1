"""Plant models, specification predicates and time discretization."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .errors import DimensionMismatch, NonFinite, ValidationError
from .fixedpoint import FixedFormat, FixedValue, quantize
from .interval import Box, Interval, IntervalMatrix

__all__ = [
    "ContinuousPlant",
    "DiscretePlant",
    "SafetySpec",
    "Controller",
    "discretize",
    "closed_loop_matrix",
    "interval_closed_loop",
]


def _readonly(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim == 1 and ndim == 2:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContinuousPlant:
    """``dx/dt = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _readonly(self.A, 2)
        B = _readonly(self.B, 2)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise DimensionMismatch(f"B shape {B.shape} incompatible with A {A.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValidationError("plant matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class DiscretePlant:
    """``x[k+1] = A_d x[k] + B_d u[k]`` sampled every ``T_s`` seconds.

    ``A_rad``/``B_rad`` are per-entry certified error radii: the exact
    discretization lies within ``A_d +- A_rad``.  They are zero when the
    matrices were given directly.
    """

    A_d: np.ndarray
    B_d: np.ndarray
    T_s: float = 1.0
    A_rad: np.ndarray = None
    B_rad: np.ndarray = None

    def __post_init__(self):
        A = _readonly(self.A_d, 2)
        B = _readonly(self.B_d, 2)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionMismatch(f"A_d must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B_d shape {B.shape} incompatible with A_d {A.shape}")
        if not self.T_s > 0:
            raise ValidationError(f"sample time must be positive, got {self.T_s}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValidationError("plant matrices must be finite")
        a_rad = np.zeros_like(A) if self.A_rad is None else _readonly(self.A_rad, 2)
        b_rad = np.zeros_like(B) if self.B_rad is None else _readonly(self.B_rad, 2)
        if a_rad.shape != A.shape or b_rad.shape != B.shape:
            raise DimensionMismatch("radius shapes must match the matrices")
        a_rad.setflags(write=False)
        b_rad.setflags(write=False)
        object.__setattr__(self, "A_d", A)
        object.__setattr__(self, "B_d", B)
        object.__setattr__(self, "T_s", float(self.T_s))
        object.__setattr__(self, "A_rad", a_rad)
        object.__setattr__(self, "B_rad", b_rad)

    @property
    def n(self):
        return self.A_d.shape[0]

    @property
    def m(self):
        return self.B_d.shape[1]

    @property
    def b(self):
        """Input column for single-input plants."""
        if self.m != 1:
            raise DimensionMismatch("only single-input plants are supported here")
        return self.B_d[:, 0]


@dataclass(frozen=True, eq=False)
class SafetySpec:
    """State box, input bounds and initial box; the reference is always zero."""

    state_box: Box
    input_bounds: Interval
    init_box: Box

    def __post_init__(self):
        if self.state_box.dim != self.init_box.dim:
            raise DimensionMismatch("state and init boxes differ in dimension")
        if np.any(self.state_box.lo >= self.state_box.hi):
            raise ValidationError("every state bound needs lower < upper")
        if not self.input_bounds.lo < self.input_bounds.hi:
            raise ValidationError("input bounds need lower < upper")
        if not self.state_box.contains(self.init_box):
            raise ValidationError("init box must lie inside the state box")

    @property
    def n(self):
        return self.state_box.dim

    @classmethod
    def symmetric(cls, n, state, inp, init):
        return cls(Box.symmetric(state, n), Interval(-inp, inp), Box.symmetric(init, n))


@dataclass(frozen=True)
class Controller:
    """State-feedback gains ``u = -K x`` for a single-input plant."""

    gains: tuple
    fmt: FixedFormat = field(default=FixedFormat(8, 8))

    def __post_init__(self):
        gains = tuple(self.gains)
        if not gains:
            raise ValueError("controller needs at least one gain")
        for g in gains:
            if not isinstance(g, FixedValue) or g.fmt != self.fmt:
                raise ValueError(f"gain {g!r} is not a {self.fmt} fixed-point value")
        object.__setattr__(self, "gains", gains)

    @classmethod
    def from_raw(cls, raw, fmt=FixedFormat(8, 8)):
        return cls(tuple(FixedValue(int(r), fmt) for r in raw), fmt)

    @classmethod
    def from_values(cls, values, fmt=FixedFormat(8, 8)):
        """Quantize real gains (truncation toward zero)."""
        return cls(tuple(quantize(v, fmt)[0] for v in values), fmt)

    @classmethod
    def zero(cls, n, fmt=FixedFormat(8, 8)):
        return cls.from_raw([0] * n, fmt)

    @property
    def n(self):
        return len(self.gains)

    @property
    def raw(self):
        return tuple(g.raw for g in self.gains)

    @property
    def values(self):
        return tuple(g.value for g in self.gains)

    @property
    def K(self):
        """Gains as a float row (1 x n); exact since they are dyadic."""
        return np.array([[float(g) for g in self.gains]])

    def __str__(self):
        return "[" + ", ".join(repr(float(g)) for g in self.gains) + "]"


# -- discretization -------------------------------------------------------------

_DPS = 40


def _mp_matrix(M):
    return mpmath.matrix([[mpmath.mpf(float(v)) for v in row] for row in M])


def _mp_norm1(M):
    return max(sum(abs(M[i, j]) for i in range(M.rows)) for j in range(M.cols))


def _zoh_exponential(A, B, T_s, dps):
    """exp of the augmented matrix [[A, B], [0, 0]] * T_s.

    Returns the top block rows as an mp matrix together with an absolute,
    entrywise error bound and the scaling depth used.
    """
    n, m = B.shape
    N = n + m
    with mpmath.workdps(dps):
        M = mpmath.zeros(N, N)
        Amp = _mp_matrix(A)
        Bmp = _mp_matrix(B)
        Ts = mpmath.mpf(float(T_s))
        for i in range(n):
            for j in range(n):
                M[i, j] = Amp[i, j] * Ts
            for j in range(m):
                M[i, n + j] = Bmp[i, j] * Ts
        norm = _mp_norm1(M)
        depth = 0
        if norm > 0.5:
            depth = int(mpmath.ceil(mpmath.log(norm / mpmath.mpf("0.5"), 2)))
        if depth > 200:
            raise NonFinite("scaling depth exceeds 200; matrix too large", depth)
        X = M / mpmath.mpf(2) ** depth
        xn = _mp_norm1(X)
        target = mpmath.mpf(10) ** (-(dps - 5))
        E = mpmath.eye(N)
        term = mpmath.eye(N)
        q = 0
        while True:
            q += 1
            term = term * X / q
            E = E + term
            # tail bound: xn^(q+1)/(q+1)! * 1/(1 - xn/(q+2))
            tail = xn ** (q + 1) / mpmath.factorial(q + 1) / (1 - xn / (q + 2))
            if tail < target or q > 200:
                break
        err = tail + N * mpmath.mpf(10) ** (-(dps - 2)) * _mp_norm1(E)
        for _ in range(depth):
            en = _mp_norm1(E)
            E = E * E
            # |(E + D)^2 - E^2| <= 2|E||D| + |D|^2, plus working-precision rounding
            err = 2 * en * err + err * err + N * mpmath.mpf(10) ** (-(dps - 2)) * en * en
            if not mpmath.isfinite(err) or err > 1e300:
                raise NonFinite("error bound diverged during squaring", depth)
        return E, err, depth


def discretize(plant, T_s, tol=1e-12):
    """Zero-order-hold discretization with a certified per-entry radius.

    ``A_d = exp(A T_s)`` and ``B_d = (int_0^T_s exp(A t) dt) B`` are read off
    the exponential of the augmented matrix ``[[A, B], [0, 0]] T_s``, computed
    by scaling and squaring in extended precision.
    """
    if not T_s > 0:
        raise ValidationError("sample time must be positive")
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    n, m = plant.n, plant.m
    for dps in (_DPS, 2 * _DPS, 4 * _DPS):
        E, err, depth = _zoh_exponential(plant.A, plant.B, T_s, dps)
        with mpmath.workdps(dps):
            top = [[E[i, j] for j in range(n + m)] for i in range(n)]
            flt = np.array([[float(v) for v in row] for row in top])
            if not np.all(np.isfinite(flt)):
                raise NonFinite("discretized matrix is not finite", depth)
            rad = np.array(
                [[float(abs(top[i][j] - mpmath.mpf(flt[i, j])) + err) for j in range(n + m)]
                 for i in range(n)]
            )
        rad = np.nextafter(rad, np.inf)
        limit = tol * np.abs(flt) + 1e-14
        if np.all(rad <= limit):
            break
    else:
        raise NonFinite(f"could not certify discretization to tol={tol}", depth)
    return DiscretePlant(flt[:, :n], flt[:, n:], T_s, rad[:, :n], rad[:, n:])


def closed_loop_matrix(plant, ctrl, exact=False):
    """``A_d - B_d K``.

    With ``exact=True`` the result is a list of rows of Fractions, computed
    from the exact binary values of ``A_d``/``B_d`` and the dyadic gains.
    """
    if plant.m != 1:
        raise DimensionMismatch("closed loop defined for single-input plants")
    if ctrl.n != plant.n:
        raise DimensionMismatch(f"controller has {ctrl.n} gains, plant has {plant.n} states")
    if exact:
        k = ctrl.values
        b = [Fraction(float(v)) for v in plant.B_d[:, 0]]
        return [
            [Fraction(float(plant.A_d[i, j])) - b[i] * k[j] for j in range(plant.n)]
            for i in range(plant.n)
        ]
    return plant.A_d - plant.B_d @ ctrl.K


def interval_closed_loop(plant, ctrl, extra_radius=0.0):
    """Interval enclosure of ``A - B K`` for every plant within the radii.

    ``extra_radius`` widens every entry of ``A_d`` and ``B_d`` (used for the
    plant-representation error of a finite word length).
    """
    A = IntervalMatrix.from_point(plant.A_d, plant.A_rad + extra_radius)
    B = IntervalMatrix.from_point(plant.B_d, plant.B_rad + extra_radius)
    return A - B @ ctrl.K


def input_interval(plant, extra_radius=0.0):
    return IntervalMatrix.from_point(plant.B_d, plant.B_rad + extra_radius)


def fraction_matrix(M):
    return [[Fraction(float(v)) for v in row] for row in np.asarray(M, dtype=float)]


def is_close(a, b, rel=1e-12):
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-300)
