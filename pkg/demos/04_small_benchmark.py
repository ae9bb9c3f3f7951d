"""
A small seeded benchmark
========================

Run a handful of trials in parallel, then recompute every metric from the
files on disk. Rerunning with the same master seed reproduces the trial
files exactly.
"""

import sys
import tempfile
from pathlib import Path

from d2dreg.bench import BenchConfig, evaluate, run_benchmark

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 8
out = Path(tempfile.mkdtemp(prefix="d2dreg_bench_"))

rows = run_benchmark(BenchConfig(trials=trials, overlap=0.7), out)
print(f"{sum(r['success'] for r in rows)}/{len(rows)} successes, results in {out}")

per_trial, summary = evaluate(out, out / "metrics.csv")
for r in per_trial:
    print(f"trial {r['trial']:>2}: RRE {r['rre_deg']:7.2f} deg  RTE/diag {r['rte_over_diag']:.3f}  "
          f"{'ok' if r['success'] else 'fail'}")
print({k: summary[k] for k in ("success_rate", "registration_recall", "median_rre_deg")})
