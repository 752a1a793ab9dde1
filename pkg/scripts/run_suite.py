"""Run both back-ends over the shipped suite and write a JSON-lines report
plus a text table (``<report>.txt``)."""

import argparse
import sys
from pathlib import Path

from fwlsynth.bench import format_table, load_benchmark, run, summarize, write_report

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--suite", default=str(ROOT / "benchmarks" / "suite"))
    ap.add_argument("--backend", choices=("msv", "aa", "both"), default="both")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--time-budget", type=float, default=120.0)
    ap.add_argument("--oracle-seeds", type=int, default=100)
    ap.add_argument("--report", default=str(ROOT / "results" / "suite.jsonl"))
    args = ap.parse_args()

    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in sorted(Path(args.suite).glob("*.json")):
        print(f"running {f.stem}", file=sys.stderr, flush=True)
        rows += run(load_benchmark(f), args.backend, args.seed, args.time_budget,
                    oracle_seeds=args.oracle_seeds)
        write_report(rows, args.report)
    print(format_table(rows))
    return 0 if summarize(rows) else 1


if __name__ == "__main__":
    sys.exit(main())
