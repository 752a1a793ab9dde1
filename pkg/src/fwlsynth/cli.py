"""Command-line front end: ``synth``, ``verify``, ``simulate`` and ``bench``.

Exit status is 0 when every requested run succeeds, 1 when any run fails
and 2 on usage or input errors.
"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bench import format_table, load_benchmark, msv_verify, run, summarize, write_report
from .errors import FwlSynthError, ParseError, ValidationError
from .fixedpoint import FixedFormat
from .model import Controller
from .noise import build_noise_model, simulate
from .verify_aa import aa_verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _floats(text):
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _schedule(text):
    """``13:3,17:7`` -> formats <13,3>, <17,7>."""
    out = []
    for part in text.split(","):
        try:
            i, f = part.split(":")
            out.append(FixedFormat(int(i), int(f)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad precision {part!r}; expected I:F")
    if not out:
        raise argparse.ArgumentTypeError("empty precision schedule")
    return tuple(out)


def _sample_time(inst, T_s):
    if T_s is None:
        return inst.sample_times[0]
    return T_s


def _controller(inst, gains):
    if len(gains) != inst.n:
        raise ValidationError(f"{len(gains)} gains given for a plant of order {inst.n}")
    ctrl = Controller.from_values(gains, inst.fmt_c)
    lost = [g for g, v in zip(gains, ctrl.values) if float(v) != g]
    if lost:
        print(f"note: gains {lost} are not representable in {inst.fmt_c}; truncated to "
              f"{[float(v) for v in ctrl.values]}", file=sys.stderr)
    return ctrl


def _emit(rows, report_out):
    print(format_table(rows))
    if report_out:
        write_report(rows, report_out)


def cmd_synth(args):
    inst = load_benchmark(args.instance)
    if args.T_s is not None:
        inst.sample_times = (args.T_s,)
    rows = run(inst, args.backend, args.seed, args.time_budget, args.k_star, args.precision_schedule,
               oracle_seeds=args.oracle_seeds)
    _emit(rows, args.report_out)
    return EXIT_OK if summarize(rows) else EXIT_FAIL


def cmd_verify(args):
    inst = load_benchmark(args.instance)
    plant = inst.plant(_sample_time(inst, args.T_s))
    ctrl = _controller(inst, args.gains)
    schedule = args.precision_schedule or inst.schedule
    ok = True
    if args.backend in ("aa", "both"):
        v = aa_verify(plant, ctrl, inst.spec, inst.fmt_dac, args.k_star)
        line = f"aa: {v.status}"
        if v.cex is not None:
            x0 = ", ".join(f"{c:g}" for c in v.cex.x0)
            line += f"  counterexample at iteration {v.cex.k} from ({x0})"
        elif v.safe:
            line += f"  horizon {v.horizon}"
        print(line)
        ok &= v.safe
    if args.backend in ("msv", "both"):
        status, r = msv_verify(plant, ctrl, inst.spec, schedule[-1], inst.fmt_dac)
        line = f"msv: {status} at {schedule[-1]}"
        if status == "UNSAFE":
            x0 = ", ".join(f"{c:g}" for c in r.x0)
            line += f"  counterexample at iteration {r.step} from ({x0}) [{r.kind}]"
        elif status == "SAFE":
            line += f"  k_bar {r.k_bar}"
        else:
            line += f"  {r}"
        print(line)
        ok &= status == "SAFE"
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args):
    inst = load_benchmark(args.instance)
    plant = inst.plant(_sample_time(inst, args.T_s))
    ctrl = _controller(inst, args.gains)
    x0 = args.x0 if args.x0 is not None else list(inst.spec.init_box.hi)
    if len(x0) != inst.n:
        raise ValidationError(f"x0 has {len(x0)} entries for a plant of order {inst.n}")
    noise = build_noise_model(inst.fmt_c, inst.fmt_dac, ctrl)
    tr = simulate(plant, ctrl, x0, args.steps, args.noise_policy, noise, inst.spec,
                  seed=args.seed, clamp=False)
    if args.trace_out:
        Path(args.trace_out).parent.mkdir(parents=True, exist_ok=True)
        tr.to_csv(args.trace_out)
    else:
        sys.stdout.write(tr.to_csv())
    v = tr.first_violation(inst.spec)
    if v is not None:
        print(f"violation: {v}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _bench_one(path, args):
    inst = load_benchmark(path)
    return run(inst, args.backend, args.seed, args.time_budget, args.k_star, args.precision_schedule,
               oracle_seeds=args.oracle_seeds)


def cmd_bench(args):
    files = sorted(Path(args.directory).glob("*.json"))
    if not files:
        raise ParseError(f"no *.json instances in {args.directory}")
    # parse everything up front so a bad file is a usage error, not a late crash
    for f in files:
        load_benchmark(f)
    rows = []
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for part in pool.map(_bench_one, files, [args] * len(files)):
                rows.extend(part)
                if args.report_out:
                    write_report(rows, args.report_out)
    else:
        for f in files:
            rows.extend(_bench_one(f, args))
            if args.report_out:
                write_report(rows, args.report_out)
    _emit(rows, args.report_out)
    return EXIT_OK if summarize(rows) else EXIT_FAIL


def build_parser():
    p = _Parser(prog="fwlsynth", description="Synthesize and verify fixed-point state-feedback controllers.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, backends=("msv", "aa", "both"), default="both"):
        sp.add_argument("--backend", choices=backends, default=default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--time-budget", type=float, default=120.0, help="seconds per back-end run")
        sp.add_argument("--k-star", type=int, default=None, help="initial tube horizon")
        sp.add_argument("--precision-schedule", type=_schedule, default=None, help="e.g. 13:3,17:7")
        sp.add_argument("--report-out", default=None, help="JSON-lines report (table goes to <path>.txt)")
        sp.add_argument("--oracle-seeds", type=int, default=100)

    s = sub.add_parser("synth", help="synthesize a controller for one instance")
    s.add_argument("instance")
    s.add_argument("--T-s", dest="T_s", type=float, default=None, help="restrict to one sample time")
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("verify", help="check given gains against an instance")
    s.add_argument("instance")
    s.add_argument("--gains", type=_floats, required=True)
    s.add_argument("--T-s", dest="T_s", type=float, default=None)
    common(s, default="aa")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="emit a closed-loop trace as CSV")
    s.add_argument("instance")
    s.add_argument("--gains", type=_floats, required=True)
    s.add_argument("--T-s", dest="T_s", type=float, default=None)
    s.add_argument("--x0", type=_floats, default=None, help="initial state (default: upper init corner)")
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--noise-policy", choices=("zero", "worst-case-sign", "sampled"), default="zero")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace-out", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("bench", help="run every instance in a directory")
    s.add_argument("directory")
    s.add_argument("--jobs", type=int, default=1)
    common(s)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FwlSynthError as exc:
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
