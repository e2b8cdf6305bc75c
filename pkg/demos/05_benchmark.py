"""The timing harness: repeated runs on fresh maps, emitted as CSV.

Equivalent CLI: voxmap bench --scenario random --points 50000 --variant par --threads 2
"""
from __future__ import annotations

import sys

from voxmap.bench import Scenario, bench_csv, run_bench

results = []
for kind in ("random", "structured"):
    sc = Scenario(kind, 50_000, ray_length=6.0, seed=0)
    for variant in ("fmap", "par", "sub", "bun"):
        r = run_bench(sc, variant, repetitions=2, threads=2)
        print(f"{kind:10s} {variant:4s} mean {r.mean_ms:8.1f} ms  "
              f"merge share {r.merge_share():.3f}", file=sys.stderr)
        results.append(r)
sys.stdout.write(bench_csv(results))
