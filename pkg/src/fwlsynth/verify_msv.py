"""Multi-staged verification: vertex safety at fixed precision, interval
replay covering plant representation errors, and the completeness check,
driven by a counterexample-guided loop that escalates plant precision."""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessUnavailable, Overflow, RepeatedEigenvalues, UnstablePlant
from .fixedpoint import FixedFormat
from .interval import Box, Interval, orbit
from .model import Controller, closed_loop_matrix, input_interval, interval_closed_loop
from .noise import FixedPointLoop, build_noise_model
from .stability import completeness_threshold
from .synth import CounterexampleSet, SearchProblem, Unsat, synthesize_candidate

__all__ = [
    "DEFAULT_SCHEDULE",
    "Pass",
    "SafetyCex",
    "PrecisionFail",
    "NewBound",
    "MsvResult",
    "verify_safety",
    "verify_precision",
    "verify_complete",
    "msv_cegis",
]

DEFAULT_SCHEDULE = (FixedFormat(13, 3), FixedFormat(17, 7), FixedFormat(21, 11), FixedFormat(25, 15))


@dataclass(frozen=True)
class Pass:
    k_bar: int = None

    def __bool__(self):
        return True


@dataclass(frozen=True)
class SafetyCex:
    """A vertex whose fixed-point run leaves the bounds at ``step``."""

    x0: tuple
    step: int
    kind: str

    def __bool__(self):
        return False


@dataclass(frozen=True)
class PrecisionFail:
    step: int
    coordinate: int
    what: str = "state"

    def __bool__(self):
        return False


@dataclass(frozen=True)
class NewBound:
    k_bar: int

    def __bool__(self):
        return False


def verify_safety(plant, ctrl, spec, k, fmt_p):
    """Run every vertex of the init box for ``k`` steps in fixed point.

    Input bounds are asserted, not saturated.  Returns :class:`Pass` or the
    first failing vertex in vertex order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    verts = spec.init_box.vertices()
    loop = FixedPointLoop(plant, ctrl, fmt_p)
    first, kinds = loop.first_violations(np.array(verts).T, k, spec)
    for v, f, kind in zip(verts, first, kinds):
        if f >= 0:
            return SafetyCex(tuple(float(c) for c in v), int(f), kind)
    return Pass()


def _precision_model(plant, ctrl, spec, fmt_p, noise=None, fmt_dac=None):
    """Interval closed loop and state-noise box for the true plant.

    Matrix entries get the discretization certificate plus the
    representation radius of the plant format; N enters through the
    (widened) input column.
    """
    rad = float(fmt_p.cm) if fmt_p is not None else 0.0
    if noise is None:
        noise = build_noise_model(ctrl.fmt, fmt_dac or ctrl.fmt, ctrl)
    A_int = interval_closed_loop(plant, ctrl, rad)
    B_int = input_interval(plant, rad)
    N = noise.N
    W = B_int.apply(Box([N.lo], [N.hi]))
    return A_int, W, noise


def _input_box(ctrl, box, N):
    """Enclosure of ``-K x + nu`` over the box (K is exact)."""
    from .interval import IntervalMatrix

    u = IntervalMatrix.from_point(-ctrl.K).apply(box)
    return Interval(u.lo[0], u.hi[0]) + N


def verify_precision(plant, ctrl, spec, k, fmt_p, noise=None, fmt_dac=None):
    """Interval replay of ``k`` steps from the whole init box.

    Steps 0..k-1 must produce admissible inputs and steps 1..k must stay in
    the safe box, for every plant within the certified and representation
    radii and every noise sequence in N.
    """
    A_int, W, noise = _precision_model(plant, ctrl, spec, fmt_p, noise, fmt_dac)
    N = noise.N
    safe = spec.state_box
    for j, box in enumerate(orbit(A_int, spec.init_box, W)):
        if j > 0 and not safe.contains(box):
            bad = (box.lo < safe.lo) | (box.hi > safe.hi)
            return PrecisionFail(j, int(np.argmax(bad)), "state")
        if j == k:
            break
        if not spec.input_bounds.contains(_input_box(ctrl, box, N)):
            return PrecisionFail(j + 1, -1, "input")
    return Pass()


def verify_complete(plant, ctrl, spec, k, fmt_p=None, noise=None, fmt_dac=None, cap=5000):
    """PASS iff ``k`` reaches the completeness threshold, else NewBound.

    When the threshold rests on an invariant box, the input bounds are also
    checked over that box.
    """
    A_int, W, noise = _precision_model(plant, ctrl, spec, fmt_p, noise, fmt_dac)
    th = completeness_threshold(
        closed_loop_matrix(plant, ctrl), plant.T_s, spec.init_box, W, A_int, cap, spec.state_box
    )
    if th.invariant is not None and not spec.input_bounds.contains(_input_box(ctrl, th.invariant, noise.N)):
        # states stay in the invariant box, but inputs are only checked per step box
        raise CompletenessUnavailable("inputs over the invariant box exceed the bounds")
    if k >= th.k_bar:
        return Pass(th.k_bar)
    return NewBound(th.k_bar)


@dataclass
class MsvResult:
    controller: Controller = None
    status: str = "FAILURE"
    diagnosis: str = ""
    precision: FixedFormat = None
    k: int = 0
    iterations: int = 0
    log: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "SUCCESS"


def msv_cegis(plant, spec, schedule=DEFAULT_SCHEDULE, fmt_c=FixedFormat(8, 8), fmt_dac=None,
              time_budget=120.0, search_budget=4000, k_max=2000):
    """Counterexample-guided synthesis with the multi-staged verifier.

    Each precision level restarts from K = 0 with an empty counterexample
    set; the search returning UNSAT or the interval replay failing moves to
    the next level.
    """
    schedule = tuple(schedule)
    if not schedule:
        raise ValueError("empty precision schedule")
    deadline = time.monotonic() + time_budget
    res = MsvResult()
    n = plant.n
    kbar_trouble = False

    def record(phase, level, k, ctrl=None, cex=None, outcome=""):
        res.log.append({
            "iteration": res.iterations,
            "phase": phase,
            "precision": str(level),
            "k": k,
            "candidate": [float(g) for g in ctrl.gains] if ctrl is not None else None,
            "counterexample": list(cex) if cex is not None else None,
            "outcome": outcome,
        })

    for li, fmt_p in enumerate(schedule):
        last = li == len(schedule) - 1
        cex = CounterexampleSet(spec.init_box)
        tabu = set()
        k = 2 * n
        while True:
            if time.monotonic() > deadline:
                res.diagnosis = "timeout"
                return res
            res.iterations += 1
            prob = SearchProblem(plant, spec, fmt_c, fmt_dac, fmt_p, horizon=k)
            ctrl = synthesize_candidate(prob, cex, search_budget, tabu, deadline)
            if isinstance(ctrl, Unsat):
                record("synthesize", fmt_p, k, outcome="UNSAT")
                if time.monotonic() > deadline:
                    res.diagnosis = "timeout"
                    return res
                break
            record("synthesize", fmt_p, k, ctrl, outcome="candidate")
            r = verify_safety(plant, ctrl, spec, k, fmt_p)
            if not r:
                record("safety", fmt_p, k, ctrl, r.x0, f"counterexample at step {r.step} ({r.kind})")
                if not cex.add(r.x0):
                    tabu.add(ctrl.raw)
                continue
            record("safety", fmt_p, k, ctrl, outcome="PASS")
            r = verify_precision(plant, ctrl, spec, k, fmt_p, fmt_dac=fmt_dac)
            if not r:
                record("precision", fmt_p, k, ctrl, outcome=f"FAIL at step {r.step} ({r.what})")
                if last:
                    tabu.add(ctrl.raw)
                    continue
                break
            record("precision", fmt_p, k, ctrl, outcome="PASS")
            try:
                r = verify_complete(plant, ctrl, spec, k, fmt_p, fmt_dac=fmt_dac, cap=k_max)
            except CompletenessUnavailable as exc:
                record("complete", fmt_p, k, ctrl, outcome=f"unavailable: {exc}")
                if exc.escaped_at is not None and not last:
                    # the interval replay would fail at k_bar: precision too low
                    break
                kbar_trouble = True
                tabu.add(ctrl.raw)
                continue
            except (UnstablePlant, RepeatedEigenvalues) as exc:
                record("complete", fmt_p, k, ctrl, outcome=f"unavailable: {exc}")
                tabu.add(ctrl.raw)
                continue
            if isinstance(r, NewBound):
                record("complete", fmt_p, k, ctrl, outcome=f"new bound {r.k_bar}")
                k = r.k_bar
                continue
            record("complete", fmt_p, k, ctrl, outcome="PASS")
            res.controller = ctrl
            res.status = "SUCCESS"
            res.precision = fmt_p
            res.k = k
            return res
    res.diagnosis = "k_bar-explosion" if kbar_trouble else "UNSAT-at-max-precision"
    return res
