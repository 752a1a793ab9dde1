"""Replay the third-order worked example: verify the two recorded gain
vectors with both back-ends, show the first violation of each, and run the
end-to-end synthesis on the instance."""

import argparse
import sys
from pathlib import Path

import numpy as np

from fwlsynth.bench import format_table, load_benchmark, msv_verify, run
from fwlsynth.model import Controller
from fwlsynth.noise import simulate
from fwlsynth.verify_aa import aa_verify

ROOT = Path(__file__).resolve().parents[1]
GAINS = {
    "first": (0.24609375, -0.125, 0.1484375),
    "final": (0.23828125, -0.17578125, 0.109375),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instance", default=str(ROOT / "benchmarks" / "illustrative3.json"))
    ap.add_argument("--skip-synth", action="store_true")
    args = ap.parse_args()

    inst = load_benchmark(args.instance)
    plant = inst.plant(inst.sample_times[0])
    for label, k in GAINS.items():
        ctrl = Controller.from_values(k, inst.fmt_c)
        v = aa_verify(plant, ctrl, inst.spec, inst.fmt_dac)
        status, r = msv_verify(plant, ctrl, inst.spec, inst.schedule[-1], inst.fmt_dac)
        print(f"{label} K={list(k)}")
        print(f"  aa : {v.status}" + (f" at iteration {v.cex.k} from {v.cex.x0}" if v.cex is not None else ""))
        print(f"  msv: {status}" + (f" at iteration {r.step} from {r.x0}" if status == "UNSAFE" else ""))
        worst = None
        for x0 in inst.spec.init_box.vertices():
            tr = simulate(plant, ctrl, x0, 10, spec=inst.spec, clamp=False)
            hit = tr.first_violation(inst.spec)
            if hit and (worst is None or hit[0] < worst[0]):
                worst = (hit[0], tuple(float(c) for c in x0), np.round(tr.x[hit[0]], 4).tolist())
        print(f"  earliest vertex violation (step, x0, state): {worst}")
    if not args.skip_synth:
        print(format_table(run(inst, "both", time_budget=120.0)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
