"""Benchmark instances, the batch runner, the simulation oracle and reports."""

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CompletenessUnavailable,
    FwlSynthError,
    ParseError,
    RepeatedEigenvalues,
    UnstablePlant,
    ValidationError,
)
from .fixedpoint import FixedFormat, dot_fixed, quantize
from .interval import Box, Interval
from .model import ContinuousPlant, Controller, DiscretePlant, SafetySpec, closed_loop_matrix, discretize
from .noise import build_noise_model
from .stability import _rotation_rule, completeness_threshold, eigenvalues
from .verify_aa import aa_cegis, aa_verify
from .verify_msv import DEFAULT_SCHEDULE, Pass, msv_cegis, verify_complete, verify_precision, verify_safety

__all__ = [
    "Instance",
    "RunRow",
    "load_benchmark",
    "parse_instance",
    "serialize",
    "run",
    "simulation_oracle",
    "msv_verify",
    "format_table",
    "write_report",
]

DEFAULT_STATE = 1.0
DEFAULT_INIT = 0.5
DEFAULT_INPUT = 10.0


@dataclass(eq=False)
class Instance:
    name: str
    mode: str
    A: np.ndarray
    B: np.ndarray
    sample_times: tuple
    spec: SafetySpec
    fmt_c: FixedFormat = FixedFormat(8, 8)
    schedule: tuple = DEFAULT_SCHEDULE
    F_adc: int = 8
    F_dac: int = 8
    rederived: bool = False
    description: str = ""

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def fmt_dac(self):
        return FixedFormat(self.fmt_c.int_bits, self.F_dac)

    def plant(self, T_s):
        if self.mode == "discrete":
            return DiscretePlant(self.A, self.B, T_s)
        return discretize(ContinuousPlant(self.A, self.B), T_s)


def _fail(where, msg):
    raise ParseError(f"{where}: {msg}")


def _matrix(doc, key, where, rows=None, cols=None):
    if key not in doc:
        _fail(where, f"missing field '{key}'")
    M = doc[key]
    if not isinstance(M, list) or not M:
        _fail(where, f"'{key}' must be a non-empty array of rows")
    out = []
    for i, row in enumerate(M):
        if isinstance(row, (int, float)) and not isinstance(row, bool):
            row = [row]
        if not isinstance(row, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
        ):
            _fail(where, f"{key} row {i} is not an array of numbers: {row!r}")
        out.append([float(v) for v in row])
    width = len(out[0])
    for i, row in enumerate(out):
        if len(row) != width:
            _fail(where, f"{key} row {i} has {len(row)} entries, expected {width}")
    if rows is not None and len(out) != rows:
        _fail(where, f"'{key}' has {len(out)} rows, expected {rows}")
    if cols is not None and width != cols:
        _fail(where, f"'{key}' has {width} columns, expected {cols}")
    return np.array(out)


def _bounds(doc, key, where, n, default):
    if key not in doc:
        return -np.full(n, default), np.full(n, default)
    b = doc[key]
    if not isinstance(b, dict) or "lo" not in b or "hi" not in b:
        _fail(where, f"'{key}' must be an object with 'lo' and 'hi'")
    lo = np.broadcast_to(np.asarray(b["lo"], dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(b["hi"], dtype=float), (n,)).copy()
    return lo, hi


def _format(d, where):
    try:
        return FixedFormat.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        _fail(where, f"bad format {d!r}: {exc}")


def parse_instance(doc, where="<instance>"):
    """Validate a decoded instance document and apply defaults."""
    if not isinstance(doc, dict):
        _fail(where, "instance must be a JSON object")
    mode = doc.get("mode", "continuous")
    if mode not in ("continuous", "discrete"):
        _fail(where, f"mode must be 'continuous' or 'discrete', got {mode!r}")
    A = _matrix(doc, "A", where)
    n = A.shape[0]
    if A.shape[1] != n:
        _fail(where, f"'A' must be square, got {A.shape[0]}x{A.shape[1]}")
    B = _matrix(doc, "B", where, rows=n)
    if B.shape[1] != 1:
        raise ValidationError(f"{where}: only single-input plants are supported (B has {B.shape[1]} columns)")
    ts = doc.get("sample_times", [1.0] if mode == "discrete" else None)
    if ts is None:
        _fail(where, "continuous instances need 'sample_times'")
    if not isinstance(ts, list) or not ts:
        _fail(where, "'sample_times' must be a non-empty array")
    ts = tuple(float(t) for t in ts)
    if any(not t > 0 for t in ts):
        raise ValidationError(f"{where}: sample times must be positive")
    ref = doc.get("reference", 0)
    if np.any(np.asarray(ref, dtype=float) != 0):
        raise ValidationError(f"{where}: nonzero reference signals are not supported")
    s_lo, s_hi = _bounds(doc, "safety_bounds", where, n, DEFAULT_STATE)
    i_lo, i_hi = _bounds(doc, "init_bounds", where, n, DEFAULT_INIT)
    u_lo, u_hi = _bounds(doc, "input_bounds", where, 1, DEFAULT_INPUT)
    try:
        spec = SafetySpec(Box(s_lo, s_hi), Interval(u_lo[0], u_hi[0]), Box(i_lo, i_hi))
    except (ValueError, FwlSynthError) as exc:
        raise ValidationError(f"{where}: {exc}") from None
    fmt_c = _format(doc.get("controller_format", {"I": 8, "F": 8}), where)
    sched = doc.get("plant_precision_schedule")
    schedule = tuple(_format(d, where) for d in sched) if sched else DEFAULT_SCHEDULE
    adc = doc.get("adc_dac", {})
    F_adc = int(adc.get("F_adc", fmt_c.frac_bits))
    F_dac = int(adc.get("F_dac", fmt_c.frac_bits))
    if F_adc != fmt_c.frac_bits:
        raise ValidationError(f"{where}: the ADC resolution must equal the controller's (F_adc = {fmt_c.frac_bits})")
    if F_dac < 0:
        raise ValidationError(f"{where}: F_dac must be >= 0")
    return Instance(
        name=str(doc.get("name", Path(where).stem)),
        mode=mode,
        A=A,
        B=B,
        sample_times=ts,
        spec=spec,
        fmt_c=fmt_c,
        schedule=schedule,
        F_adc=F_adc,
        F_dac=F_dac,
        rederived=bool(doc.get("rederived", False)),
        description=str(doc.get("description", "")),
    )


def load_benchmark(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_instance(doc, str(path))


def serialize(inst):
    """Inverse of :func:`parse_instance` (all fields explicit)."""
    s = inst.spec
    doc = {
        "name": inst.name,
        "mode": inst.mode,
        "A": inst.A.tolist(),
        "B": inst.B.tolist(),
        "sample_times": list(inst.sample_times),
        "init_bounds": s.init_box.to_dict(),
        "input_bounds": {"lo": [float(s.input_bounds.lo)], "hi": [float(s.input_bounds.hi)]},
        "safety_bounds": s.state_box.to_dict(),
        "controller_format": inst.fmt_c.to_dict(),
        "plant_precision_schedule": [f.to_dict() for f in inst.schedule],
        "adc_dac": {"F_adc": inst.F_adc, "F_dac": inst.F_dac},
        "rederived": inst.rederived,
    }
    if inst.description:
        doc["description"] = inst.description
    return doc


# -- oracle ---------------------------------------------------------------------


def oracle_horizon(plant, ctrl, spec, fmt_dac=None):
    """k_bar used by the oracle (closure-aware when available)."""
    A = closed_loop_matrix(plant, ctrl)
    noise = build_noise_model(ctrl.fmt, fmt_dac or ctrl.fmt, ctrl)
    try:
        return completeness_threshold(A, plant.T_s, spec.init_box, noise.state_noise(plant)).k_bar
    except (CompletenessUnavailable, RepeatedEigenvalues):
        return _rotation_rule(eigenvalues(A))[0]


def _implemented_input(ctrl, x):
    """The controller as it runs on the target: truncate x, fixed-point dot."""
    fmt = ctrl.fmt
    xs = [quantize(float(v), fmt)[0] for v in x]
    u, _ = dot_fixed(ctrl, xs)
    return -float(u)


def simulation_oracle(plant, ctrl, spec, fmt_dac=None, steps=None, seeds=100, seed=0):
    """Independent check: binary64 plant, every vertex, ``steps`` steps.

    One run per vertex uses the real fixed-point controller; ``seeds`` more
    runs per vertex add noise sampled uniformly from N to the exact product
    ``-K x``.  Returns ``(violations, steps)``.
    """
    try:
        if steps is None:
            steps = 10 * oracle_horizon(plant, ctrl, spec, fmt_dac)
    except UnstablePlant:
        steps = 1000
    noise = build_noise_model(ctrl.fmt, fmt_dac or ctrl.fmt, ctrl)
    nb = float(noise.bound)
    A, b, K = plant.A_d, plant.B_d[:, 0], ctrl.K[0]
    lo, hi = spec.state_box.lo, spec.state_box.hi
    ulo, uhi = spec.input_bounds.lo, spec.input_bounds.hi
    verts = np.array(spec.init_box.vertices())
    violations = 0

    for v in verts:
        x = v.astype(float)
        for _ in range(steps):
            try:
                u = _implemented_input(ctrl, x)
            except FwlSynthError:
                violations += 1
                break
            x = A @ x + b * u
            if u < ulo or u > uhi or np.any(x < lo) or np.any(x > hi):
                violations += 1
                break

    rng = np.random.default_rng(seed)
    # all seeds and vertices advance together
    X = np.repeat(verts.T[:, None, :], seeds, axis=1).reshape(plant.n, -1)
    alive = np.ones(X.shape[1], dtype=bool)
    for _ in range(steps):
        nu = rng.uniform(-nb, nb, size=X.shape[1])
        u = -(K @ X) + nu
        X = A @ X + np.outer(b, u)
        bad = (u < ulo) | (u > uhi) | np.any((X < lo[:, None]) | (X > hi[:, None]), axis=0)
        violations += int(np.sum(bad & alive))
        alive &= ~bad
        if not alive.any():
            break
    return violations, steps


def msv_verify(plant, ctrl, spec, fmt_p, fmt_dac=None, k_max=2000):
    """All three verification stages at ``fmt_p`` with k raised to k_bar."""
    k = 2 * plant.n
    while True:
        r = verify_safety(plant, ctrl, spec, k, fmt_p)
        if not r:
            return "UNSAFE", r
        r = verify_precision(plant, ctrl, spec, k, fmt_p, fmt_dac=fmt_dac)
        if not r:
            return "FAIL", r
        try:
            r = verify_complete(plant, ctrl, spec, k, fmt_p, fmt_dac=fmt_dac, cap=k_max)
        except FwlSynthError as exc:
            return "UNKNOWN", exc
        if isinstance(r, Pass):
            return "SAFE", r
        k = r.k_bar


# -- runner ---------------------------------------------------------------------


@dataclass
class RunRow:
    benchmark: str
    backend: str
    T_s: float
    order: int
    precision: str = ""
    K: list = None
    time: float = 0.0
    outcome: str = "FAILURE"
    diagnosis: str = ""
    oracle: str = "-"
    oracle_steps: int = 0
    cross: str = "-"
    iterations: int = 0
    rederived: bool = False

    def to_json(self):
        return json.dumps(asdict(self))


def run(inst, backend="both", seed=0, time_budget=120.0, k_star=None, schedule=None,
        search_budget=4000, oracle_seeds=100, cross_check=True):
    """Run the requested back-end(s) over every candidate sample time."""
    backends = ("msv", "aa") if backend == "both" else (backend,)
    schedule = tuple(schedule) if schedule else inst.schedule
    rows = []
    for T_s in inst.sample_times:
        try:
            plant = inst.plant(T_s)
        except FwlSynthError as exc:
            for be in backends:
                rows.append(RunRow(inst.name, be, T_s, inst.n, diagnosis=f"discretization: {exc}",
                                   rederived=inst.rederived))
            continue
        for be in backends:
            row = RunRow(inst.name, be, T_s, inst.n, rederived=inst.rederived)
            t0 = time.perf_counter()
            if be == "msv":
                res = msv_cegis(plant, inst.spec, schedule, inst.fmt_c, inst.fmt_dac,
                                time_budget, search_budget)
                row.precision = str(res.precision) if res.precision else ""
            elif be == "aa":
                res = aa_cegis(plant, inst.spec, inst.fmt_c, inst.fmt_dac, time_budget, k_star,
                               search_budget)
                row.precision = "binary64"
            else:
                raise ValueError(f"unknown backend {be!r}")
            row.time = time.perf_counter() - t0
            row.iterations = res.iterations
            row.outcome = res.status
            row.diagnosis = res.diagnosis
            if res.ok:
                ctrl = res.controller
                row.K = [float(g) for g in ctrl.gains]
                viol, steps = simulation_oracle(plant, ctrl, inst.spec, inst.fmt_dac,
                                                seeds=oracle_seeds, seed=seed)
                row.oracle = "SAFE" if viol == 0 else f"UNSAFE({viol})"
                row.oracle_steps = steps
                if cross_check:
                    if be == "msv":
                        v = aa_verify(plant, ctrl, inst.spec, inst.fmt_dac, k_star)
                        row.cross = "PASS" if v.safe else v.status
                    else:
                        status, _ = msv_verify(plant, ctrl, inst.spec, schedule[-1], inst.fmt_dac)
                        row.cross = "PASS" if status == "SAFE" else status
            rows.append(row)
    return rows


COLUMNS = [
    ("benchmark", "Benchmark"),
    ("backend", "Backend"),
    ("order", "Order"),
    ("T_s", "T_s"),
    ("precision", "Precision"),
    ("outcome", "Outcome"),
    ("time", "Time[s]"),
    ("oracle", "Oracle"),
    ("cross", "Cross"),
    ("K", "K"),
    ("diagnosis", "Diagnosis"),
]


def _cell(row, key):
    v = getattr(row, key)
    if key == "time":
        return f"{v:.2f}"
    if key == "K":
        return "-" if v is None else "[" + " ".join(f"{g:g}" for g in v) + "]"
    if key == "T_s":
        return f"{v:g}"
    return str(v) if v not in (None, "") else "-"


def format_table(rows):
    cells = [[title for _, title in COLUMNS]]
    for r in rows:
        cells.append([_cell(r, key) for key, _ in COLUMNS])
    widths = [max(len(row[i]) for row in cells) for i in range(len(COLUMNS))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_report(rows, path):
    """JSON lines to ``path`` and the aligned table to ``path`` + ``.txt``."""
    _atomic_write(path, "".join(r.to_json() + "\n" for r in rows))
    _atomic_write(str(path) + ".txt", format_table(rows) + "\n")


def summarize(rows):
    """True iff every run succeeded and no cross-check disagreed."""
    return all(r.outcome == "SUCCESS" and r.cross in ("PASS", "-") for r in rows)
