"""Benchmark the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [repeats]

Times the hot per-issue operations on synthetic workloads and a full
marketplace run, printing one row per kernel with the speedup factor.
"""

from __future__ import annotations

import random
import sys
import time
from pathlib import Path

from agorasim import _kernels_py

try:
    from agorasim import _speedups
except ImportError:
    _speedups = None

REPO_ROOT = Path(__file__).resolve().parents[1]


def timed(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_time_fraction(mod, ts):
    f = mod.time_fraction
    for t in ts:
        f(t, 37.0, 0.2, 5.0)


def bench_issue_score(mod, values):
    f = mod.issue_score
    for v in values:
        f(10.0, 20.0, v, True)


def bench_weighted_utility(mod, packages):
    f = mod.weighted_utility
    for offers, mins, maxs, weights in packages:
        f(offers, mins, maxs, weights, True)


def bench_concession(mod, triples):
    f = mod.concession_ratio
    for a, b, c in triples:
        f(a, b, c)


def bench_crossing(mod, schedules):
    f = mod.threshold_crossing
    for xs, ys in schedules:
        f(xs, ys, 0.2, 50.0)


def make_workloads(rng):
    ts = [rng.uniform(0, 40) for _ in range(200_000)]
    values = [rng.uniform(10, 20) for _ in range(200_000)]
    packages = []
    for _ in range(20_000):
        n = rng.randint(1, 8)
        mins = [rng.uniform(0, 10) for _ in range(n)]
        maxs = [m + rng.uniform(1, 20) for m in mins]
        offers = [rng.uniform(mins[i], maxs[i]) for i in range(n)]
        weights = [1.0 / n] * n
        packages.append((offers, mins, maxs, weights))
    triples = [
        (rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 100))
        for _ in range(200_000)
    ]
    schedules = []
    for _ in range(20_000):
        n = rng.randint(2, 6)
        xs = sorted(rng.uniform(0, 50) for _ in range(n))
        ys = [rng.uniform(0, 1) for _ in range(n)]
        schedules.append((xs, ys))
    return {
        "time_fraction": (bench_time_fraction, ts),
        "issue_score": (bench_issue_score, values),
        "weighted_utility": (bench_weighted_utility, packages),
        "concession_ratio": (bench_concession, triples),
        "threshold_crossing": (bench_crossing, schedules),
    }


def bench_full_run(repeats: int) -> None:
    from agorasim import load_scenario, run_simulation

    text = (REPO_ROOT / "scenarios" / "market-10x5.yaml").read_text(encoding="utf-8")
    scenario = load_scenario(text)
    best = timed(lambda: run_simulation(scenario), repeats=repeats)
    print(f"{'market-10x5 run':>20}  {best * 1e3:9.2f} ms   (selected backend)")


def main() -> int:
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    if _speedups is None:
        print("compiled extension not available; nothing to compare")
        return 1
    rng = random.Random(7)
    workloads = make_workloads(rng)
    print(f"{'kernel':>20}  {'python':>10}  {'cython':>10}  speedup")
    for name, (fn, payload) in workloads.items():
        py = timed(fn, _kernels_py, payload, repeats=repeats)
        cy = timed(fn, _speedups, payload, repeats=repeats)
        print(f"{name:>20}  {py * 1e3:8.2f}ms  {cy * 1e3:8.2f}ms  {py / cy:6.2f}x")
    bench_full_run(repeats)
    return 0


if __name__ == "__main__":
    sys.exit(main())
