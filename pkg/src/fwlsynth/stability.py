"""Characteristic polynomials, the Jury test, completeness thresholds and
the steady-state offset of a finite-word-length controller."""

import math
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .errors import (
    CompletenessUnavailable,
    RepeatedEigenvalues,
    SingularMatrix,
    UnstablePlant,
)
from .interval import Box, IntervalMatrix, powers
from .model import closed_loop_matrix

__all__ = [
    "CharPoly",
    "CompletenessThreshold",
    "char_poly",
    "jury_check",
    "jury_check_margin",
    "eigenvalues",
    "spectral_radius",
    "completeness_threshold",
    "fwl_convergence_set",
]


def _frac(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    return Fraction(float(v))


def _frac_matrix(A):
    if isinstance(A, np.ndarray):
        A = A.tolist()
    rows = [[_frac(v) for v in row] for row in A]
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ValueError("matrix must be square")
    return rows


@dataclass(frozen=True)
class CharPoly:
    """Monic polynomial, coefficients highest degree first (``coeffs[0] == 1``)."""

    coeffs: tuple

    def __post_init__(self):
        c = tuple(_frac(v) for v in self.coeffs)
        if not c or c[0] != 1:
            raise ValueError("characteristic polynomial must be monic")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, z):
        acc = 0
        for c in self.coeffs:
            acc = acc * z + c
        return acc

    def roots(self):
        """Numerical roots via the companion matrix (hints only)."""
        if self.degree == 0:
            return np.zeros(0, dtype=complex)
        return np.roots([float(c) for c in self.coeffs])

    def __str__(self):
        terms = []
        n = self.degree
        for i, c in enumerate(self.coeffs):
            if c == 0 and i > 0:
                continue
            p = n - i
            mono = "" if p == 0 else ("z" if p == 1 else f"z^{p}")
            coef = "" if (c == 1 and p > 0) else str(c)
            terms.append(f"{coef}{mono}" or "1")
        return " + ".join(terms)


def char_poly(A_cl):
    """``det(zI - A)`` by the Faddeev-LeVerrier recurrence over the rationals.

    Float entries are taken at their exact binary value, so the result is the
    exact characteristic polynomial of the matrix as stored.
    """
    A = _frac_matrix(A_cl)
    n = len(A)
    coeffs = [Fraction(1)]
    M = [[Fraction(0)] * n for _ in range(n)]
    c = Fraction(1)
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{k-1} I
        AM = [[sum(A[i][t] * M[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        for i in range(n):
            AM[i][i] += c
        M = AM
        tr = sum(sum(A[i][t] * M[t][i] for t in range(n)) for i in range(n))
        c = -tr / k
        coeffs.append(c)
    return CharPoly(tuple(coeffs))


def _schur_cohn(coeffs):
    """All roots strictly inside the unit circle (exact, coefficients high first)."""
    p = list(coeffs)
    while len(p) > 1:
        lead, const = p[0], p[-1]
        if abs(const) >= abs(lead):
            return False
        d = len(p) - 1
        # (lead * p(z) - const * p*(z)) / z, where p* is the reversed polynomial
        p = [lead * p[i] - const * p[d - i] for i in range(d)]
    return p[0] != 0


def jury_check(p):
    """True iff every root of the monic polynomial lies in |z| < 1."""
    if not isinstance(p, CharPoly):
        p = CharPoly(tuple(p))
    return _schur_cohn(p.coeffs)


def jury_check_margin(p, rho):
    """True iff every root lies in |z| < rho (test on p(rho z) / rho^n)."""
    if not isinstance(p, CharPoly):
        p = CharPoly(tuple(p))
    r = _frac(rho)
    if not 0 < r <= 1:
        raise ValueError(f"margin must lie in (0, 1], got {rho}")
    scaled = [c / r**i for i, c in enumerate(p.coeffs)]
    return _schur_cohn(scaled)


def eigenvalues(A, dps=40):
    """Eigenvalues in extended precision, returned as complex128."""
    M = np.asarray([[float(v) for v in row] for row in (A.tolist() if isinstance(A, np.ndarray) else A)])
    n = M.shape[0]
    if n == 1:
        return M[0].astype(complex)
    with mpmath.workdps(dps):
        try:
            ev = mpmath.eig(mpmath.matrix(M.tolist()), left=False, right=False)
        except (ZeroDivisionError, mpmath.libmp.NoConvergence):
            return np.linalg.eigvals(M)
        return np.array([complex(v) for v in ev], dtype=complex).reshape(n)


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


@dataclass(frozen=True)
class CompletenessThreshold:
    """Unfolding depth after which a stable loop cannot exhibit new violations.

    ``k_bar = max(rotation, closure)``: ``rotation`` is the number of steps for
    the slowest-turning eigenvalue to complete a turn (1 for a real
    spectrum); ``closure`` is the closure step of :func:`closure_index`
    when an initial box was supplied, and ``invariant`` the invariant box
    when that step came from the hull rule.
    """

    k_bar: int
    theta: float
    basis: str
    rotation: int
    closure: int = None
    T_s: float = 1.0
    invariant: Box = None

    @property
    def rate(self):
        """Rotation speed in radians per second."""
        return self.theta / self.T_s


def _rotation_rule(ev, tol=1e-12):
    args = []
    for lam in ev:
        mag = abs(lam)
        if mag < 1e-300:
            continue
        a = abs(math.atan2(lam.imag, lam.real))
        if a > tol:
            args.append(a)
    complex_present = any(abs(lam.imag) > tol * max(abs(lam), 1e-300) for lam in ev)
    if not complex_present:
        return 1, 0.0, "real-monotone"
    theta = min(args)
    return math.ceil(2 * math.pi / theta - 1e-12), theta, "complex-rotation"


def closure_index(A_int, init_box, noise=None, cap=5000, bound=None):
    """First step m >= 1 after which no new reachable states appear.

    Two sound rules are tried at each m, with ``Box_k`` the enclosure of the
    reachable set at step k:

    * ``Box_m`` lies inside ``init_box``: every later set then lies inside an
      earlier one, so steps below m cover all time;
    * some box ``H`` containing ``Box_0 .. Box_{m-1}`` has its m-step image
      ``[A^m] H + sum_{i<m} [A^i] noise`` inside itself: then ``H`` holds
      every reachable state.  ``H`` is tried as the hull of those boxes and,
      when ``bound`` is given, as that hull pushed halfway out to ``bound``.
      This handles loops whose noise floor is wider than the initial box.

    Returns ``(m, H)`` where ``H`` is None for the first rule.  With
    ``bound`` the search stops as soon as an enclosure leaves that box.
    """
    A = A_int if isinstance(A_int, IntervalMatrix) else IntervalMatrix.from_point(np.asarray(A_int, float))
    n = init_box.dim
    acc = Box.point(np.zeros(n))
    hull = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k, P in enumerate(powers(A)):
            box = P.apply(init_box) + acc
            if k > 0:
                if init_box.contains(box):
                    return k, None
                for H in candidates:
                    if H.contains(P.apply(H) + acc):
                        return k, H
            if bound is not None and not bound.contains(box):
                raise CompletenessUnavailable(f"reach enclosure leaves the bounding box at step {k}", k)
            if not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))) or k >= cap:
                break
            hull = box if hull is None else hull.hull(box)
            candidates = [hull]
            if bound is not None:
                candidates.append(Box(0.5 * (hull.lo + bound.lo), 0.5 * (hull.hi + bound.hi)))
            if noise is not None:
                acc = acc + P.apply(noise)
    raise CompletenessUnavailable(f"reach enclosure does not close within {cap} steps")


def completeness_threshold(A_cl, T_s=1.0, init_box=None, noise=None, enclosure=None, cap=5000,
                           bound=None):
    """Completeness threshold of a stable closed loop.

    Without ``init_box`` only the rotation rule is applied and repeated
    eigenvalues are rejected.  With ``init_box`` (and optionally a noise box
    and an interval ``enclosure`` of the matrix) the closure index is folded
    in, which makes the threshold sound for any stable matrix.
    """
    if not jury_check(char_poly(A_cl)):
        raise UnstablePlant("closed loop is not Schur stable")
    ev = eigenvalues(A_cl)
    if init_box is None:
        for i in range(len(ev)):
            for j in range(i + 1, len(ev)):
                if abs(ev[i] - ev[j]) < 1e-9:
                    raise RepeatedEigenvalues(f"eigenvalues {ev[i]} and {ev[j]} coincide")
    rot, theta, basis = _rotation_rule(ev)
    closure = invariant = None
    if init_box is not None:
        A_int = enclosure if enclosure is not None else IntervalMatrix.from_point(
            np.asarray([[float(v) for v in row] for row in A_cl])
        )
        closure, invariant = closure_index(A_int, init_box, noise, cap, bound)
    k_bar = max(rot, closure or 1)
    return CompletenessThreshold(k_bar, theta, basis, rot, closure, float(T_s), invariant)


def _solve_exact(M, R):
    """Solve M X = R over the rationals by Gauss-Jordan elimination."""
    n = len(M)
    aug = [list(M[i]) + list(R[i]) for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise SingularMatrix("I - A_cl is singular")
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [v / pv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def fwl_convergence_set(plant, ctrl, delta):
    """Box of steady-state offsets ``(I - A_cl)^-1 B K d`` over ``|d_i| <= delta``.

    Solved exactly over the rationals for the stored matrices; endpoints are
    rounded outward to binary64.
    """
    A_cl = closed_loop_matrix(plant, ctrl, exact=True)
    if not jury_check(char_poly(A_cl)):
        raise UnstablePlant("closed loop is not Schur stable")
    n = plant.n
    I_minus = [[(1 if i == j else 0) - A_cl[i][j] for j in range(n)] for i in range(n)]
    b = [Fraction(float(v)) for v in plant.B_d[:, 0]]
    k = ctrl.values
    BK = [[b[i] * k[j] for j in range(n)] for i in range(n)]
    M = _solve_exact(I_minus, BK)
    d = _frac(delta)
    r = [sum(abs(v) for v in row) * abs(d) for row in M]
    hi = np.array([float(v) for v in r])
    hi = np.where(np.array([Fraction(float(h)) < v for h, v in zip(hi, r)]), np.nextafter(hi, np.inf), hi)
    return Box(-hi, hi)
