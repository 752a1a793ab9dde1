"""Reach-tube verification and the abstraction-refinement synthesis loop.

The tube holds exact interval-power enclosures ``[A^k] X0 + sum_{i<k} [A^i] W``
for k <= K*, and a tail box valid for every k > K*.  The tail comes from an
m-step contraction certificate in a box-weighted infinity norm: if
``gamma = ||[A^m]||_d < 1`` and ``eta = ||sum_{i<m} [A^i] W||_d`` then every
later state satisfies ``||x_k||_d <= max(max_{K*-m<j<=K*} ||Box_j||_d,
eta / (1 - gamma))``.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CompletenessUnavailable,
    Infeasible,
    NoContractionCertificate,
    Overflow,
    RefinementExhausted,
    RepeatedEigenvalues,
    UnstablePlant,
)
from .fixedpoint import FixedFormat
from .interval import Box, Interval, IntervalMatrix, powers
from .model import Controller, closed_loop_matrix, interval_closed_loop
from .noise import build_noise_model, simulate
from .stability import char_poly, completeness_threshold, eigenvalues, jury_check, _rotation_rule
from .synth import (
    Counterexample,
    CounterexampleSet,
    SearchProblem,
    SpectralConstraint,
    Unsat,
    synthesize_candidate,
)

__all__ = [
    "ReachTube",
    "Suspect",
    "RealCex",
    "Spurious",
    "AaVerdict",
    "AaResult",
    "reach_tube",
    "check_tube",
    "confirm_or_refine",
    "refine_spectrum",
    "aa_verify",
    "aa_cegis",
    "default_horizon",
]


@dataclass(frozen=True, eq=False)
class ReachTube:
    """``boxes[k]`` encloses the states at step k (``boxes[0]`` is X0);
    ``tail`` encloses every state after ``horizon``."""

    boxes: tuple
    tail: Box
    gamma: float
    block: int
    noise: Box

    @property
    def horizon(self):
        return len(self.boxes) - 1

    @property
    def hull(self):
        h = self.tail
        for b in self.boxes:
            h = h.hull(b)
        return h

    def at(self, k):
        """Enclosure valid at step k."""
        return self.boxes[k] if k <= self.horizon else self.tail

    def contains(self, k, x, tol=0.0):
        return self.at(k).contains_point(x, tol)


def _box_norm(box, d):
    """Upper bound of ``max_i |x_i| / d_i`` over the box."""
    r = np.nextafter(box.mag / d, np.inf)
    return float(np.nextafter(np.max(r) * (1 + 4e-16), np.inf))


def reach_tube(plant, ctrl, spec, noise, k_star, routing="input", weights=None):
    """Sound enclosure of every reachable state of the real noisy loop."""
    if k_star < 1:
        raise ValueError("horizon must be >= 1")
    if not jury_check(char_poly(closed_loop_matrix(plant, ctrl, exact=True))):
        raise UnstablePlant("closed loop is not Schur stable")
    A = interval_closed_loop(plant, ctrl)
    W = noise.state_noise(plant, routing)
    n = plant.n
    d = np.asarray(weights if weights is not None else spec.state_box.mag, dtype=float)
    X0 = spec.init_box
    acc = Box.point(np.zeros(n))
    boxes, pows, sums = [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for k, power in enumerate(powers(A)):
            box = power.apply(X0) + acc
            if not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
                # interval powers can diverge for a stable but non-normal matrix
                raise NoContractionCertificate(f"reach enclosure diverges at step {k}")
            boxes.append(box)
            pows.append(power)
            sums.append(acc)
            if k == k_star:
                break
            acc = acc + power.apply(W)
    norms = [_box_norm(b, d) for b in boxes]
    best = None
    for m in range(1, k_star + 1):
        gamma = pows[m].weighted_norm(d)
        if not gamma < 1:
            continue
        eta = _box_norm(sums[m], d)
        floor = float(np.nextafter(eta / (1 - gamma), np.inf)) if eta else 0.0
        R = max(max(norms[k_star - m + 1:]), floor)
        if best is None or R < best[0]:
            best = (R, gamma, m)
    if best is None:
        raise NoContractionCertificate(f"no m <= {k_star} with ||A^m||_d < 1")
    R, gamma, m = best
    tail = Box.symmetric(np.nextafter(d * R * (1 + 4e-16), np.inf))
    return ReachTube(tuple(boxes), tail, gamma, m, W)


@dataclass(frozen=True)
class Suspect:
    """Earliest tube violation; ``k == horizon + 1`` marks the tail."""

    k: int
    x0: tuple
    coordinate: int
    what: str = "state"

    def __bool__(self):
        return False


@dataclass(frozen=True)
class RealCex:
    k: int
    x0: tuple

    def __bool__(self):
        return False


@dataclass(frozen=True)
class Spurious:
    suspect: Suspect

    def __bool__(self):
        return False


@dataclass(frozen=True)
class TubePass:
    def __bool__(self):
        return True


def _worst_vertex(spec, image_row, maximize):
    verts = spec.init_box.vertices()
    vals = [float(image_row @ v) for v in verts]
    idx = int(np.argmax(vals)) if maximize else int(np.argmin(vals))
    return tuple(float(c) for c in verts[idx])


def check_tube(tube, spec, plant=None, ctrl=None, noise=None):
    """PASS iff every step box and the tail lie in the safe box.

    When ``ctrl`` and ``noise`` are given the inputs ``-K x + nu`` are also
    checked against the input bounds.  On failure returns the earliest
    violating step and the vertex of X0 whose image pushes hardest on the
    violated bound.
    """
    safe = spec.state_box
    A_pt = closed_loop_matrix(plant, ctrl) if (plant is not None and ctrl is not None) else None
    steps = list(enumerate(tube.boxes)) + [(tube.horizon + 1, tube.tail)]
    Kneg = IntervalMatrix.from_point(-ctrl.K) if ctrl is not None else None
    N = noise.N if noise is not None else Interval(0.0, 0.0)
    for k, box in steps:
        bad_hi = box.hi > safe.hi
        bad_lo = box.lo < safe.lo
        if k > 0 and (bad_hi.any() or bad_lo.any()):
            i = int(np.argmax(bad_hi | bad_lo))
            upper = bool(bad_hi[i])
            if A_pt is not None:
                row = np.linalg.matrix_power(A_pt, k)[i]
                x0 = _worst_vertex(spec, row, upper)
            else:
                x0 = tuple(spec.init_box.hi if upper else spec.init_box.lo)
            return Suspect(k, x0, i, "state")
        if Kneg is not None and k <= tube.horizon:
            u = Kneg.apply(box)
            ui = Interval(u.lo[0], u.hi[0]) + N
            if not spec.input_bounds.contains(ui):
                upper = ui.hi > spec.input_bounds.hi
                row = -ctrl.K[0] @ np.linalg.matrix_power(A_pt, k)
                return Suspect(k + 1, _worst_vertex(spec, row, upper), -1, "input")
    return TubePass()


def _violation_step(tr, spec):
    """First step whose state (or the input applied just before) is out of bounds."""
    lo, hi = spec.state_box.lo, spec.state_box.hi
    ulo, uhi = spec.input_bounds.lo, spec.input_bounds.hi
    for k in range(1, len(tr)):
        u = tr.u[k - 1]
        if u < ulo or u > uhi:
            return k
        if np.any(tr.x[k] < lo) or np.any(tr.x[k] > hi):
            return k
    return None


def confirm_or_refine(suspect, plant, ctrl, spec, noise, horizon=None):
    """Replay the suspect concretely with worst-case-sign noise.

    The suspect vertex is tried first, then the remaining vertices; a
    reproduced violation is a :class:`RealCex` at its first failing step.
    """
    steps = max(suspect.k, horizon or 0)
    verts = [tuple(suspect.x0)] + [
        tuple(float(c) for c in v) for v in spec.init_box.vertices()
        if tuple(float(c) for c in v) != tuple(suspect.x0)
    ]
    found = None
    for x0 in verts:
        for policy in ("worst-case-sign", "zero"):
            try:
                tr = simulate(plant, ctrl, x0, steps, policy, noise, spec, clamp=False)
            except Overflow as exc:
                k = exc.step or 1
                cand = RealCex(k, x0)
            else:
                k = _violation_step(tr, spec)
                cand = RealCex(k, x0) if k is not None else None
            if cand is not None and (found is None or cand.k < found.k):
                found = cand
        if found is not None and x0 == verts[0]:
            return found
    return found if found is not None else Spurious(suspect)


def refine_spectrum(cex_list, current, r_x0, r_noise, safe_radius, tol=1e-4):
    """Tighten the spectral-radius cap so that
    ``rho^k r_x0 + r_noise / (1 - rho) <= safe_radius`` at every flagged k."""
    if not cex_list:
        raise ValueError("need at least one counterexample")
    if r_noise > safe_radius:
        raise Infeasible("noise alone exceeds the safe radius")

    def f(rho, k):
        if rho >= 1:
            return math.inf if r_noise > 0 else r_x0
        return rho**k * r_x0 + r_noise / (1 - rho)

    rho_max = current.rho_max
    flagged = list(current.flagged)
    for c in cex_list:
        k = c.k
        if f(1.0, k) <= safe_radius:
            rho = 1.0
        else:
            if f(0.0, k) > safe_radius:
                raise Infeasible(f"no spectral radius meets iteration {k}")
            lo, hi = 0.0, 1.0
            while hi - lo > tol:
                mid = (lo + hi) / 2
                if f(mid, k) <= safe_radius:
                    lo = mid
                else:
                    hi = mid
            rho = lo
            if rho <= 0:
                raise Infeasible(f"no spectral radius meets iteration {k}")
        rho_max = min(rho_max, rho)
        if k not in flagged:
            flagged.append(k)
    return SpectralConstraint(rho_max, tuple(flagged))


def default_horizon(plant, ctrl, spec=None, noise=None):
    """K* = max(2 k_bar, 32)."""
    A = closed_loop_matrix(plant, ctrl)
    try:
        th = completeness_threshold(A, plant.T_s)
        k_bar = th.k_bar
    except RepeatedEigenvalues:
        k_bar, _, _ = _rotation_rule(eigenvalues(A))
    return max(2 * k_bar, 32)


@dataclass
class AaVerdict:
    status: str
    cex: RealCex = None
    tube: ReachTube = None
    horizon: int = 0
    refinements: int = 0
    suspect: Suspect = None

    @property
    def safe(self):
        return self.status == "SAFE"


def aa_verify(plant, ctrl, spec, fmt_dac=None, k_star=None, cap=4, routing="input"):
    """Verify a fixed controller with the tube, refining by doubling K*.

    Returns SAFE, UNSAFE (with a concrete counterexample) or UNKNOWN when
    the refinement cap is reached with a spurious suspect.
    """
    noise = build_noise_model(ctrl.fmt, fmt_dac or ctrl.fmt, ctrl)
    if not jury_check(char_poly(closed_loop_matrix(plant, ctrl, exact=True))):
        # an unstable loop leaves any bounded box; find the witness
        r = confirm_or_refine(Suspect(1, tuple(spec.init_box.hi), 0), plant, ctrl, spec, noise, 2000)
        if isinstance(r, RealCex):
            return AaVerdict("UNSAFE", r)
        return AaVerdict("UNKNOWN")
    horizon = k_star or default_horizon(plant, ctrl)
    suspect = None
    for attempt in range(cap + 1):
        try:
            tube = reach_tube(plant, ctrl, spec, noise, horizon, routing)
        except NoContractionCertificate:
            horizon *= 2
            continue
        r = check_tube(tube, spec, plant, ctrl, noise)
        if r:
            return AaVerdict("SAFE", None, tube, horizon, attempt)
        suspect = r
        c = confirm_or_refine(r, plant, ctrl, spec, noise)
        if isinstance(c, RealCex):
            return AaVerdict("UNSAFE", c, tube, horizon, attempt, r)
        horizon *= 2
    return AaVerdict("UNKNOWN", None, None, horizon, cap, suspect)


@dataclass
class AaResult:
    controller: Controller = None
    status: str = "FAILURE"
    diagnosis: str = ""
    horizon: int = 0
    iterations: int = 0
    log: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "SUCCESS"


def _geometry(spec, noise_box):
    safe = float(np.min(spec.state_box.mag))
    r0 = float(np.max(spec.init_box.mag))
    rn = float(np.max(noise_box.mag))
    return r0, rn, safe


def aa_cegis(plant, spec, fmt_c=FixedFormat(8, 8), fmt_dac=None, time_budget=120.0,
             k_star=None, search_budget=4000, cap=4, routing="input"):
    """Synthesize, build the tube, check, confirm or refine, repeat."""
    deadline = time.monotonic() + time_budget
    res = AaResult()
    cex = CounterexampleSet(spec.init_box)
    phi = SpectralConstraint()
    tabu = set()

    def record(phase, ctrl=None, outcome="", **extra):
        rec = {
            "iteration": res.iterations,
            "phase": phase,
            "candidate": [float(g) for g in ctrl.gains] if ctrl is not None else None,
            "rho_max": phi.rho_max,
            "outcome": outcome,
        }
        rec.update(extra)
        res.log.append(rec)

    while True:
        if time.monotonic() > deadline:
            res.diagnosis = "timeout"
            return res
        res.iterations += 1
        prob = SearchProblem(plant, spec, fmt_c, fmt_dac, None, horizon=1, spectral=phi)
        ctrl = synthesize_candidate(prob, cex, search_budget, tabu, deadline)
        if isinstance(ctrl, Unsat):
            record("synthesize", outcome="UNSAT")
            res.diagnosis = "timeout" if time.monotonic() > deadline else "UNSAT"
            return res
        record("synthesize", ctrl, "candidate")
        v = aa_verify(plant, ctrl, spec, fmt_dac, k_star, cap, routing)
        res.horizon = v.horizon
        if v.safe:
            record("verify", ctrl, "PASS", horizon=v.horizon)
            res.controller = ctrl
            res.status = "SUCCESS"
            return res
        if v.status == "UNSAFE":
            record("verify", ctrl, "counterexample", k=v.cex.k, x0=list(v.cex.x0))
            cex.add(Counterexample(v.cex.x0, v.cex.k))
            noise = build_noise_model(fmt_c, fmt_dac or fmt_c, ctrl)
            r0, rn, safe = _geometry(spec, noise.state_noise(plant, routing))
            try:
                phi = refine_spectrum([v.cex], phi, r0, rn, safe)
            except Infeasible as exc:
                record("abstract", ctrl, f"infeasible: {exc}")
                res.diagnosis = "Infeasible"
                return res
            record("abstract", ctrl, "refined", flagged=list(phi.flagged))
            # a re-found counterexample must not re-admit the same gains
            tabu.add(ctrl.raw)
            continue
        # persistent spurious suspects: drop this candidate and search on
        record("verify", ctrl, "refinement exhausted", horizon=v.horizon)
        tabu.add(ctrl.raw)
