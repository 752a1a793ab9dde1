"""Quantization noise model and closed-loop simulators.

Two simulators live here.  :func:`simulate`/:func:`noisy_step` run the plant
in binary64 with the controller error injected as bounded additive noise on
``u``.  :class:`FixedPointLoop` runs the whole loop on scaled integers, with
the plant at ``<I_p, F_p>`` and the controller at ``<I_c, F_c>``: ADC
truncation, fixed-point dot product, cast to the plant format, and a plant
update with per-product truncation.
"""

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import Overflow
from .fixedpoint import FixedFormat, matvec_raw, quantize_array
from .interval import Box, Interval

__all__ = [
    "NoiseModel",
    "Trace",
    "FixedPointLoop",
    "build_noise_model",
    "noisy_step",
    "simulate",
    "worst_case_rollout",
]


@dataclass(frozen=True)
class NoiseModel:
    """Bounds of the ADC quantum ``q1``, DAC quantum ``q2`` and controller
    round-off ``q3``.  All three are exact Fractions."""

    q1: Fraction
    q2: Fraction
    q3: Fraction
    n: int

    def __post_init__(self):
        if min(self.q1, self.q2, self.q3) < 0:
            raise ValueError("noise quanta must be nonnegative")

    @property
    def bound(self):
        """Half-width of the noise set N."""
        return self.q1 / 2 + self.q2 / 2 + self.q3

    @property
    def N(self):
        b = _up(self.bound)
        return Interval(-b, b)

    @property
    def controller_bound(self):
        """Half-width of the noise on the controller side (ADC plus round-off)."""
        return self.q1 / 2 + self.q3

    @property
    def dac_bound(self):
        return self.q2 / 2

    @property
    def B_n(self):
        return np.ones(self.n)

    def state_noise(self, plant, routing="input", extra_radius=0.0):
        """Box of per-step additive state noise.

        ``routing="input"`` sends N through the input column of the plant;
        ``"ones"`` adds N to every coordinate.
        """
        b = float(self.N.hi)
        if routing == "ones":
            return Box.symmetric(b, self.n)
        if routing != "input":
            raise ValueError(f"unknown noise routing {routing!r}")
        col = np.abs(plant.B_d[:, 0]) + plant.B_rad[:, 0] + extra_radius
        r = col * b
        r = np.nextafter(r + np.abs(r) * 4e-16, np.inf)
        return Box(-r, r)


def _up(q):
    f = float(q)
    if Fraction(f) < q:
        f = float(np.nextafter(f, np.inf))
    return f


def build_noise_model(fmt_c, fmt_dac, ctrl):
    """Noise quanta for a controller: ``q1 = 2^-F_c``, ``q2 = 2^-F_dac`` if the
    DAC is coarser than the controller (else 0), ``q3 = c_m (n + sum |K_i|)``."""
    if isinstance(fmt_dac, int):
        fmt_dac = FixedFormat(fmt_c.int_bits, fmt_dac)
    q1 = fmt_c.cm
    q2 = fmt_dac.cm if fmt_dac.frac_bits < fmt_c.frac_bits else Fraction(0)
    gains = ctrl.values
    q3 = fmt_c.cm * (len(gains) + sum(abs(g) for g in gains))
    return NoiseModel(q1, q2, q3, len(gains))


@dataclass
class Trace:
    """Recorded run: ``x[k]`` is the state at step k and ``u[k]`` the input
    applied at step k (NaN on the final row)."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.x.shape[0],):
            raise ValueError("trace lengths differ")

    @property
    def steps(self):
        return self.x.shape[0] - 1

    @property
    def k(self):
        return np.arange(self.x.shape[0])

    def __len__(self):
        return self.x.shape[0]

    def rows(self):
        for k in range(len(self)):
            yield k, self.x[k], self.u[k]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.x.shape[1]
        w.writerow(["k"] + [f"x{i + 1}" for i in range(n)] + ["u"])
        for k, x, u in self.rows():
            w.writerow([k] + [repr(float(v)) for v in x] + [repr(float(u))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def first_violation(self, spec):
        """(step, coordinate) of the first state outside the safe box, or None."""
        lo, hi = spec.state_box.lo, spec.state_box.hi
        bad = (self.x < lo) | (self.x > hi)
        if not bad.any():
            return None
        k = int(np.argmax(bad.any(axis=1)))
        return k, int(np.argmax(bad[k]))


def _clamp(u, spec):
    if spec is None:
        return u
    return np.clip(u, spec.input_bounds.lo, spec.input_bounds.hi)


def _to_plant_precision(x, fmt_p, step=None):
    if fmt_p is None:
        return x
    try:
        raw = quantize_array(x, fmt_p)
    except Overflow as exc:
        raise Overflow(str(exc), step) from None
    return raw / fmt_p.scale


def noisy_step(plant, ctrl, x, nu1=0.0, nu2=0.0, spec=None, fmt_p=None):
    """``u = clamp(-K x + nu1)``, ``x+ = A_d x + B_d (u + nu2)``.

    With ``fmt_p`` the new state is truncated to the plant format.
    """
    x = np.asarray(x, dtype=float)
    u = -float(ctrl.K[0] @ x) + nu1
    u = float(_clamp(u, spec))
    x_next = plant.A_d @ x + plant.B_d[:, 0] * (u + nu2)
    if not np.all(np.isfinite(x_next)):
        raise Overflow("state left the binary64 range")
    return _to_plant_precision(x_next, fmt_p), u


def simulate(plant, ctrl, x0, steps, noise_policy="zero", noise=None, spec=None,
             fmt_p=None, seed=None, clamp=True):
    """Roll the noisy loop forward ``steps`` steps.

    ``noise_policy`` is ``"zero"``, ``"worst-case-sign"`` or ``"sampled"``
    (uniform noise from ``seed``).  The controller-side noise covers ADC and
    round-off (``q1/2 + q3``), the DAC side ``q2/2``.  With ``clamp=False``
    the input is recorded unsaturated so input-bound violations stay visible.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if noise_policy not in ("zero", "worst-case-sign", "sampled"):
        raise ValueError(f"unknown noise policy {noise_policy!r}")
    if noise_policy != "zero" and noise is None:
        raise ValueError("noise model required for a noisy policy")
    rng = np.random.default_rng(seed)
    b1 = float(noise.controller_bound) if noise else 0.0
    b2 = float(noise.dac_bound) if noise else 0.0
    scale = spec.state_box.mag if spec is not None else np.ones(plant.n)
    sat = spec if clamp else None
    x = _to_plant_precision(np.asarray(x0, dtype=float), fmt_p, 0)
    xs, us = [x], []
    for k in range(steps):
        try:
            if noise_policy == "zero":
                x, u = noisy_step(plant, ctrl, x, 0.0, 0.0, sat, fmt_p)
            elif noise_policy == "sampled":
                x, u = noisy_step(plant, ctrl, x, rng.uniform(-b1, b1), rng.uniform(-b2, b2), sat, fmt_p)
            else:
                best = None
                for s in (1.0, -1.0):
                    cand = noisy_step(plant, ctrl, x, s * b1, s * b2, sat, fmt_p)
                    score = float(np.max(np.abs(cand[0]) / scale))
                    if best is None or score > best[0]:
                        best = (score, cand)
                x, u = best[1]
        except Overflow as exc:
            raise Overflow(str(exc), k + 1) from None
        xs.append(x)
        us.append(u)
    us.append(np.nan)
    return Trace(np.array(xs), np.array(us))


def worst_case_rollout(plant, ctrl, X0, steps, noise=None, spec=None):
    """Vectorized binary64 rollouts from the columns of ``X0``.

    Each step takes whichever noise sign (or zero) pushes the state furthest
    out relative to the safe box.  Returns an array (steps+1, n, V) of states
    and (steps, V) of inputs; inputs are not clamped.
    """
    X = np.array(X0, dtype=float, ndmin=2)
    if X.shape[0] != plant.n:
        X = X.T
    K = ctrl.K[0]
    b = plant.B_d[:, 0]
    bound = float(noise.controller_bound + noise.dac_bound) if noise else 0.0
    scale = spec.state_box.mag if spec is not None else np.ones(plant.n)
    xs = np.empty((steps + 1,) + X.shape)
    us = np.empty((steps, X.shape[1]))
    xs[0] = X
    for k in range(steps):
        u = -(K @ X)
        base = plant.A_d @ X + np.outer(b, u)
        if bound:
            push = np.outer(b, np.full(X.shape[1], bound))
            up = np.max(np.abs(base + push) / scale[:, None], axis=0)
            dn = np.max(np.abs(base - push) / scale[:, None], axis=0)
            sign = np.where(up >= dn, 1.0, -1.0)
            base = base + push * sign
            u = u + sign * bound
        X = base
        xs[k + 1] = X
        us[k] = u
    return xs, us


@dataclass
class FixedPointLoop:
    """Closed loop on scaled integers: plant at ``fmt_p``, controller at the
    controller's own format."""

    plant: object
    ctrl: object
    fmt_p: FixedFormat
    A_raw: np.ndarray = field(init=False)
    B_raw: np.ndarray = field(init=False)

    def __post_init__(self):
        self.A_raw = quantize_array(self.plant.A_d, self.fmt_p)
        self.B_raw = quantize_array(self.plant.B_d, self.fmt_p)
        self.k_raw = np.array(self.ctrl.raw, dtype=np.int64)
        self.fmt_c = self.ctrl.fmt

    @property
    def A_value(self):
        return self.A_raw / self.fmt_p.scale

    @property
    def B_value(self):
        return self.B_raw / self.fmt_p.scale

    def _shift(self, raw, src, dst):
        d = dst - src
        if d >= 0:
            return raw * (1 << d) if raw.dtype == object else raw << d
        q = np.abs(raw) >> (-d)
        return np.where(raw < 0, -q, q)

    def initial(self, X0):
        X = np.array(X0, dtype=float, ndmin=2)
        if X.shape[0] != self.plant.n:
            X = X.T
        return quantize_array(X, self.fmt_p)

    def step(self, X, step=None):
        """One step from raw plant states (n, V); returns (X_next, u_raw_c)."""
        fp, fc = self.fmt_p.frac_bits, self.fmt_c.frac_bits
        xc = self._shift(X, fp, fc)
        if np.any(np.abs(xc) > self.fmt_c.max_raw):
            raise Overflow("state does not fit the controller format", step)
        try:
            u = -matvec_raw(self.k_raw[None, :], xc, fc, self.fmt_c.max_raw)[0]
        except Overflow as exc:
            raise Overflow(str(exc), step) from None
        u_p = self._shift(np.asarray(u), fc, fp)
        if np.any(np.abs(u_p) > self.fmt_p.max_raw):
            raise Overflow("input does not fit the plant format", step)
        try:
            ax = matvec_raw(self.A_raw, X, fp, self.fmt_p.max_raw)
            bu = matvec_raw(self.B_raw, u_p[None, :], fp, self.fmt_p.max_raw)
        except Overflow as exc:
            raise Overflow(str(exc), step) from None
        X_next = ax + bu
        if np.any(np.abs(X_next) > self.fmt_p.max_raw):
            raise Overflow("state overflows the plant format", step)
        return X_next, u

    def first_violations(self, X0, steps, spec):
        """Per column, the first step at which a bound fails (or -1).

        A step ``k`` fails when the input computed at step ``k-1`` leaves the
        input bounds or the state at step ``k`` leaves the safe box.  Overflow
        of either format counts as a failure at the step it happens.  Returns
        ``(steps_array, kinds)`` with kinds in {"", "input", "state", "overflow"}.
        """
        X = self.initial(X0)
        V = X.shape[1]
        first = np.full(V, -1)
        kinds = [""] * V
        lo = spec.state_box.lo[:, None]
        hi = spec.state_box.hi[:, None]
        u_lo, u_hi = spec.input_bounds.lo, spec.input_bounds.hi
        scale_p = self.fmt_p.scale
        scale_c = self.fmt_c.scale
        bad0 = np.any((X / scale_p < lo) | (X / scale_p > hi), axis=0)
        for j in np.flatnonzero(bad0):
            first[j], kinds[j] = 0, "state"
        alive = first < 0
        for k in range(1, steps + 1):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            try:
                Xn, u = self.step(X[:, idx], k)
            except Overflow:
                # retry column by column to attribute the overflow
                Xn = X.copy()
                u = np.zeros(idx.size, dtype=X.dtype)
                keep = []
                for pos, j in enumerate(idx):
                    try:
                        xj, uj = self.step(X[:, [j]], k)
                    except Overflow:
                        first[j], kinds[j] = k, "overflow"
                        alive[j] = False
                        continue
                    keep.append((pos, j, xj[:, 0], uj[0]))
                for pos, j, xj, uj in keep:
                    Xn[:, j] = xj
                    u[pos] = uj
                Xn = Xn[:, idx]
                live = np.array([alive[j] for j in idx])
            else:
                live = np.ones(idx.size, dtype=bool)
            uv = np.asarray(u, dtype=float) / scale_c
            bad_u = (uv < u_lo) | (uv > u_hi)
            xv = np.asarray(Xn, dtype=float) / scale_p
            bad_x = np.any((xv < lo) | (xv > hi), axis=0)
            for pos, j in enumerate(idx):
                if not live[pos]:
                    continue
                if bad_u[pos]:
                    first[j], kinds[j] = k, "input"
                    alive[j] = False
                elif bad_x[pos]:
                    first[j], kinds[j] = k, "state"
                    alive[j] = False
            X = X.copy()
            X[:, idx] = Xn
        return first, kinds

    def trajectory(self, x0, steps):
        """Values (steps+1, n) and controller outputs of a single run."""
        X = self.initial(np.asarray(x0, dtype=float)[:, None])
        xs = [X[:, 0] / self.fmt_p.scale]
        us = []
        for k in range(1, steps + 1):
            X, u = self.step(X, k)
            xs.append(X[:, 0] / self.fmt_p.scale)
            us.append(float(u[0]) / self.fmt_c.scale)
        us.append(np.nan)
        return Trace(np.array(xs, dtype=float), np.array(us))
