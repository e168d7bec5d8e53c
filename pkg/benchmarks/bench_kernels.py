"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Runs every hot kernel on a realistic workload under the active backend,
then (when the compiled path is active) re-runs itself in a subprocess
with QDCASCADE_DISABLE_NUMBA=1 and prints a side-by-side comparison.

Usage: python3 benchmarks/bench_kernels.py
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from qdcascade import CascadeForm, from_cascade_form, simulate_counts
from qdcascade.accel import NUMBA_ENABLED
from qdcascade.kernels import (
    GAUSS_COUNT_THRESHOLD,
    accept_cascades,
    coincidence_histogram,
    mle_minimize,
    mle_objective,
    params_from_tril,
)
from qdcascade.tomography import _psd_start, _stacks


def tomo_problem():
    rho = from_cascade_form(CascadeForm(0.5, 0.5, 0.05 + 0.17j))
    records = simulate_counts(rho, n_per_setting=1e5, seed=1)
    projs, counts, weights = _stacks(records)
    x0 = params_from_tril(_psd_start(rho.matrix))
    return x0, projs, counts, weights


def event_problem(n=1_000_000, seed=2):
    rng = np.random.default_rng(seed)
    t_pump = rng.exponential(200.0, n).cumsum()
    decay_xx = rng.exponential(0.4, n)
    decay_x = rng.exponential(0.8, n)
    return t_pump, decay_xx, decay_x


def histogram_problem(n=200_000, seed=3):
    rng = np.random.default_rng(seed)
    t1 = np.sort(rng.uniform(0.0, 4e7, n))
    t2 = np.sort(t1 + rng.exponential(0.8, n))
    return t1, t2


def timeit_best(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_benchmarks():
    x0, projs, counts, weights = tomo_problem()
    t_pump, decay_xx, decay_x = event_problem()
    t1, t2 = histogram_problem()

    cases = {
        "mle_objective (16 settings)": (
            lambda: mle_objective(x0, projs, counts, weights, GAUSS_COUNT_THRESHOLD),
            200,
        ),
        "mle_minimize (full fit)": (
            lambda: mle_minimize(
                x0, projs, counts, weights, GAUSS_COUNT_THRESHOLD, 1e-9, 2000
            ),
            20,
        ),
        "accept_cascades (1e6 pumps)": (
            lambda: accept_cascades(t_pump, decay_xx, decay_x),
            10,
        ),
        "coincidence_histogram (2e5 tags)": (
            lambda: coincidence_histogram(t1, t2, 8.0, 320),
            10,
        ),
    }

    results = {}
    for name, (fn, repeats) in cases.items():
        warmup = time.perf_counter()
        fn()
        first = time.perf_counter() - warmup
        results[name] = {"best_s": timeit_best(fn, repeats), "first_call_s": first}
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    args = parser.parse_args()

    results = run_benchmarks()
    if args.json:
        print(json.dumps(results))
        return

    backend = "numba" if NUMBA_ENABLED else "numpy"
    fallback = None
    if NUMBA_ENABLED:
        env = dict(os.environ, QDCASCADE_DISABLE_NUMBA="1")
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--json"],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        fallback = json.loads(out.stdout.strip().splitlines()[-1])

    width = max(len(k) for k in results)
    if fallback is None:
        print(f"backend: {backend}")
        print(f"{'kernel':<{width}}  {'best':>12}")
        for name, r in results.items():
            print(f"{name:<{width}}  {r['best_s'] * 1e3:>10.3f} ms")
        if backend == "numpy":
            print("\ncompiled path disabled; unset QDCASCADE_DISABLE_NUMBA to compare")
        return

    print(f"{'kernel':<{width}}  {'numba':>12}  {'numpy':>12}  {'speedup':>8}")
    for name, r in results.items():
        a = r["best_s"]
        b = fallback[name]["best_s"]
        print(
            f"{name:<{width}}  {a * 1e3:>10.3f} ms  {b * 1e3:>10.3f} ms  {b / a:>7.1f}x"
        )
    compile_s = sum(r["first_call_s"] - r["best_s"] for r in results.values())
    print(f"\none-time compile overhead ~{compile_s:.1f} s (excluded from timings)")


if __name__ == "__main__":
    main()
