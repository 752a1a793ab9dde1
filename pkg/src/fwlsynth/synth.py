"""Candidate search for fixed-point gain vectors.

The search is a deterministic local search on the integer lattice of raw
gain words.  It starts from K = 0, then from pole-placement seeds rounded
to the controller format, and moves by +-2^j raw units one coordinate at a
time.  Candidates are ranked by a lexicographic score; anything that scores
as feasible is re-checked exactly (rational Jury test, integer rollouts)
before it is returned.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import Overflow
from .fixedpoint import FixedFormat, quantize
from .model import Controller, closed_loop_matrix
from .noise import FixedPointLoop, build_noise_model, simulate, worst_case_rollout
from .stability import char_poly, jury_check, jury_check_margin

__all__ = [
    "Counterexample",
    "CounterexampleSet",
    "GainBounds",
    "SpectralConstraint",
    "Unsat",
    "SearchProblem",
    "gain_bounds",
    "synthesize_candidate",
    "validate_candidate",
    "pole_placement_gain",
]


@dataclass(frozen=True)
class Counterexample:
    """Initial state, plus the target iteration for reach-tube counterexamples."""

    x0: tuple
    k: int = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))


class CounterexampleSet:
    """Ordered, duplicate-free collection of counterexamples."""

    def __init__(self, init_box=None, entries=()):
        self.init_box = init_box
        self._items = []
        for e in entries:
            self.add(e)

    def add(self, cex):
        if not isinstance(cex, Counterexample):
            cex = Counterexample(cex)
        if self.init_box is not None and not self.init_box.contains_point(cex.x0):
            raise ValueError(f"counterexample {cex.x0} lies outside the initial box")
        if cex in self._items:
            return False
        self._items.append(cex)
        return True

    def clear(self):
        self._items.clear()

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __contains__(self, cex):
        return cex in self._items

    @property
    def states(self):
        """MSV entries (no target iteration)."""
        return [c for c in self._items if c.k is None]

    @property
    def targeted(self):
        return [c for c in self._items if c.k is not None]


@dataclass(frozen=True)
class GainBounds:
    """Admissible gains under the input bound at the initial states:
    ``sum_i |K_i| * w_i <= u_max`` with ``w_i = max |x_i|`` over the init box."""

    weights: tuple
    u_max: float

    @property
    def l1(self):
        """Bound on ``sum |K_i|`` (inf when the init box is the origin)."""
        w = max(self.weights)
        return math.inf if w == 0 else self.u_max / w

    def per_entry(self, i):
        w = self.weights[i]
        return math.inf if w == 0 else self.u_max / w

    def excess(self, K):
        return max(0.0, sum(abs(float(k)) * w for k, w in zip(K, self.weights)) - self.u_max)

    def admits(self, K):
        # exact check on dyadic gains and binary64 weights
        from fractions import Fraction

        lhs = sum(abs(Fraction(float(k))) * Fraction(w) for k, w in zip(K, self.weights))
        return lhs <= Fraction(self.u_max)


def gain_bounds(spec):
    w = tuple(float(v) for v in spec.init_box.mag)
    u_max = float(max(abs(spec.input_bounds.lo), abs(spec.input_bounds.hi)))
    return GainBounds(w, u_max)


@dataclass(frozen=True)
class SpectralConstraint:
    """Cap on the spectral radius and the iterations flagged by refinement."""

    rho_max: float = 1.0
    flagged: tuple = ()

    def __post_init__(self):
        if not 0 < self.rho_max <= 1:
            raise ValueError(f"rho_max must lie in (0, 1], got {self.rho_max}")


@dataclass(frozen=True)
class Unsat:
    """The search schedule was exhausted without a candidate."""

    reason: str
    evaluations: int = 0

    def __bool__(self):
        return False


@dataclass
class SearchProblem:
    """Everything the candidate predicate needs."""

    plant: object
    spec: object
    fmt_c: FixedFormat = FixedFormat(8, 8)
    fmt_dac: FixedFormat = None
    fmt_p: FixedFormat = None
    horizon: int = 1
    spectral: SpectralConstraint = field(default_factory=SpectralConstraint)

    def __post_init__(self):
        if self.fmt_dac is None:
            self.fmt_dac = self.fmt_c


def pole_placement_gain(A, b, poles):
    """Ackermann's formula ``K = e_n^T C^-1 phi(A)`` for a single input."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[0]
    C = np.empty((n, n))
    col = b
    for i in range(n):
        C[:, i] = col
        col = A @ col
    if np.linalg.cond(C) > 1e12:
        raise np.linalg.LinAlgError("uncontrollable pair")
    coeffs = np.real(np.poly(poles))
    phi = np.zeros((n, n))
    P = np.eye(n)
    for c in coeffs[::-1]:
        phi += c * P
        P = P @ A
    e = np.zeros(n)
    e[-1] = 1.0
    return np.linalg.solve(C.T, e) @ phi


def _spectra(n):
    out = []
    for rho in (0.5, 0.7, 0.85, 0.3, 0.93, 0.1):
        reals = [rho * (1 - 0.15 * i) for i in range(n)]
        out.append(reals)
        if n >= 2:
            for theta in (0.25, 0.6):
                z = rho * complex(math.cos(theta), math.sin(theta))
                out.append([z, z.conjugate()] + reals[: n - 2])
    return out


def _seeds(problem):
    plant, fmt = problem.plant, problem.fmt_c
    n = plant.n
    seeds = [tuple([0] * n)]
    for poles in _spectra(n):
        try:
            K = pole_placement_gain(plant.A_d, plant.B_d[:, 0], poles)
            raw = tuple(quantize(float(k), fmt)[0].raw for k in K)
        except (np.linalg.LinAlgError, Overflow, ValueError):
            continue
        if raw not in seeds:
            seeds.append(raw)
    return seeds


class _Evaluator:
    """Scores raw gain vectors; caches by raw tuple."""

    def __init__(self, problem, cex):
        self.p = problem
        self.cex = list(cex)
        self.gb = gain_bounds(problem.spec)
        self.cache = {}
        self.count = 0
        spec = problem.spec
        self.scale = spec.state_box.mag
        self.u_lo, self.u_hi = spec.input_bounds.lo, spec.input_bounds.hi
        states = [c.x0 for c in self.cex if c.k is None]
        self.msv_X = np.array(states, dtype=float).T if states else None
        targeted = [c for c in self.cex if c.k is not None]
        self.aa_X = np.array([c.x0 for c in targeted], dtype=float).T if targeted else None
        self.aa_k = np.array([c.k for c in targeted]) if targeted else None

    def controller(self, raw):
        return Controller.from_raw(raw, self.p.fmt_c)

    def _state_excess(self, xs, us, upto=None):
        """Max normalized excess over safe box and input bounds (0 if safe)."""
        lo = self.p.spec.state_box.lo[None, :, None]
        hi = self.p.spec.state_box.hi[None, :, None]
        over = np.maximum(xs - hi, lo - xs) / self.scale[None, :, None]
        over = np.maximum(over, 0.0)
        uover = np.maximum(np.maximum(us - self.u_hi, self.u_lo - us), 0.0) / max(self.u_hi - self.u_lo, 1e-300)
        if upto is not None:
            steps = np.arange(xs.shape[0])[:, None]
            over = np.where(steps[:, None, :] <= upto[None, None, :], over, 0.0)
            usteps = np.arange(us.shape[0])[:, None]
            uover = np.where(usteps < upto[None, :], uover, 0.0)
        return float(np.sum(np.max(over, axis=(0, 1))) + np.sum(np.max(uover, axis=0, initial=0.0)))

    def _fixed_excess(self, ctrl):
        p = self.p
        if self.msv_X is None or p.fmt_p is None:
            return 0.0
        try:
            loop = FixedPointLoop(p.plant, ctrl, p.fmt_p)
            X = loop.initial(self.msv_X)
            xs, us = [X / p.fmt_p.scale], []
            for k in range(1, p.horizon + 1):
                X, u = loop.step(X, k)
                xs.append(np.asarray(X, dtype=float) / p.fmt_p.scale)
                us.append(np.asarray(u, dtype=float) / p.fmt_c.scale)
        except Overflow:
            return 1e6
        return self._state_excess(np.array(xs), np.array(us))

    def _float_excess(self, ctrl, noise):
        total = 0.0
        p = self.p
        if self.msv_X is not None:
            xs, us = worst_case_rollout(p.plant, ctrl, self.msv_X, p.horizon, noise, p.spec)
            total += self._state_excess(xs, us)
        if self.aa_X is not None:
            steps = int(self.aa_k.max())
            xs, us = worst_case_rollout(p.plant, ctrl, self.aa_X, steps, noise, p.spec)
            total += self._state_excess(xs, us, upto=self.aa_k)
        if not np.isfinite(total):
            return 1e6
        return total

    def score(self, raw):
        if raw in self.cache:
            return self.cache[raw]
        self.count += 1
        p = self.p
        ctrl = self.controller(raw)
        gain = self.gb.excess(ctrl.values)
        A_cl = closed_loop_matrix(p.plant, ctrl)
        rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
        stab = max(0.0, rho - p.spectral.rho_max * (1 - 1e-9))
        cex = 0.0
        if stab == 0.0 and gain == 0.0:
            noise = build_noise_model(p.fmt_c, p.fmt_dac, ctrl)
            cex = self._float_excess(ctrl, noise) + self._fixed_excess(ctrl)
        s = (gain, stab, cex, rho)
        self.cache[raw] = s
        return s


def _feasible(score):
    return score[0] == 0 and score[1] == 0 and score[2] == 0


def _neighbors(raw, fmt):
    n = len(raw)
    jmax = fmt.int_bits + fmt.frac_bits
    lim = fmt.max_raw
    for j in range(jmax):
        step = 1 << j
        for i in range(n):
            for s in (step, -step):
                v = raw[i] + s
                if abs(v) <= lim:
                    yield raw[:i] + (v,) + raw[i + 1:]


def validate_candidate(problem, ctrl, cex):
    """Independent re-check of every candidate condition.

    Returns the list of failed conditions (empty when the candidate is valid).
    Uses the rational Jury test and the scalar simulators, not the search's
    vectorized scoring.
    """
    p = problem
    failed = []
    if ctrl.fmt != p.fmt_c:
        failed.append("format")
    A_cl = closed_loop_matrix(p.plant, ctrl, exact=True)
    cp = char_poly(A_cl)
    if not jury_check(cp) or (p.spectral.rho_max < 1 and not jury_check_margin(cp, p.spectral.rho_max)):
        failed.append("stability")
    if not gain_bounds(p.spec).admits(ctrl.values):
        failed.append("gain-bounds")
    noise = build_noise_model(p.fmt_c, p.fmt_dac, ctrl)
    spec = p.spec
    for c in cex:
        horizon = p.horizon if c.k is None else c.k
        try:
            tr = simulate(p.plant, ctrl, c.x0, horizon, "worst-case-sign", noise, spec, clamp=False)
        except Overflow:
            failed.append(f"cex {c.x0}: overflow")
            continue
        u_bad = np.any((tr.u[:-1] < spec.input_bounds.lo) | (tr.u[:-1] > spec.input_bounds.hi))
        if tr.first_violation(spec) is not None or u_bad:
            failed.append(f"cex {c.x0}: worst-case noise")
            continue
        if c.k is None and p.fmt_p is not None:
            try:
                first, _ = FixedPointLoop(p.plant, ctrl, p.fmt_p).first_violations(
                    np.array(c.x0)[:, None], horizon, spec)
            except Overflow:
                first = [1]
            if first[0] >= 0:
                failed.append(f"cex {c.x0}: fixed-point")
    return failed


def synthesize_candidate(problem, cex=(), budget=20000, tabu=(), deadline=None):
    """Search for a controller satisfying every candidate condition.

    ``budget`` caps the number of scored gain vectors; ``deadline`` is an
    absolute ``time.monotonic()`` value.  Returns a :class:`Controller` or
    :class:`Unsat`.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    cex = list(cex)
    tabu = set(tabu)
    ev = _Evaluator(problem, cex)
    fmt = problem.fmt_c
    rejected = set()

    def accept(raw):
        if raw in tabu or raw in rejected:
            return None
        ctrl = ev.controller(raw)
        if validate_candidate(problem, ctrl, cex):
            rejected.add(raw)
            return None
        return ctrl

    def out_of_time():
        return ev.count >= budget or (deadline is not None and time.monotonic() > deadline)

    for seed in _seeds(problem):
        cur = seed
        cur_s = ev.score(cur)
        visited = {cur}
        while True:
            if _feasible(cur_s):
                ctrl = accept(cur)
                if ctrl is not None:
                    return ctrl
            if out_of_time():
                return Unsat("search budget exhausted", ev.count)
            best, best_s = None, None
            for nb in _neighbors(cur, fmt):
                if nb in visited:
                    continue
                s = ev.score(nb)
                if _feasible(s) and (nb in tabu or nb in rejected):
                    continue
                if best_s is None or s < best_s or (s == best_s and nb < best):
                    best, best_s = nb, s
                if out_of_time():
                    break
            improving = best_s is not None and (best_s < cur_s or (_feasible(best_s) and not _feasible(cur_s)))
            if _feasible(cur_s) and (cur in tabu or cur in rejected):
                # stuck on a rejected feasible point: take the best neighbor anyway
                improving = best is not None and best not in tabu
            if not improving:
                break
            cur, cur_s = best, best_s
            visited.add(cur)
    return Unsat("search schedule exhausted", ev.count)
