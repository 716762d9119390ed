"""Benchmark the compiled collision kernels against the pure numpy fallback.

Run as ``python -m lorentzmix.benchmark``.  Both backends are exercised on the
same inputs; per-step outputs are cross-checked to 1e-12 before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import get_backend
from .billiard import sample_boundary
from .geometry import default_table, validate_table


def _time(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-step", type=int, default=200_000,
                    help="batch size for the single-step benchmark")
    ap.add_argument("--n-trace", type=int, default=20_000,
                    help="batch size for the 100-step trace benchmark")
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20260810)
    args = ap.parse_args(argv)

    table = default_table()
    validate_table(table, rng=args.seed)
    geom = table.geometry()
    gen = np.random.Generator(np.random.Philox(key=args.seed))

    try:
        core = get_backend("cython")
    except ImportError:
        print("compiled backend unavailable; nothing to compare")
        return 1
    pure = get_backend("pure")

    scat, theta, phi = sample_boundary(table, args.n_step, gen)
    rc = core.step_batch(geom, scat, theta, phi)
    rp = pure.step_batch(geom, scat, theta, phi)
    worst = max(
        float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).max())
        for a, b in zip(rc, rp)
    )
    print(f"step_batch agreement (N={args.n_step}): max|diff| = {worst:.2e}")
    if worst > 1e-12:
        print("backends disagree beyond tolerance; benchmark aborted")
        return 1

    t_core = _time(lambda: core.step_batch(geom, scat, theta, phi))
    t_pure = _time(lambda: pure.step_batch(geom, scat, theta, phi))
    print(f"step_batch   N={args.n_step:>8}: cython {t_core*1e3:8.1f} ms   "
          f"pure {t_pure*1e3:8.1f} ms   speedup {t_pure/t_core:6.1f}x")

    scat, theta, phi = sample_boundary(table, args.n_trace, gen)
    cps = np.array([args.steps], dtype=np.int64)
    t_core = _time(lambda: core.trace_batch(geom, scat, theta, phi, cps), repeat=2)
    t_pure = _time(lambda: pure.trace_batch(geom, scat, theta, phi, cps), repeat=2)
    rate = args.n_trace * args.steps / t_core
    print(f"trace_batch  N={args.n_trace:>8} x {args.steps} steps: "
          f"cython {t_core:8.2f} s   pure {t_pure:8.2f} s   "
          f"speedup {t_pure/t_core:6.1f}x   ({rate/1e6:.1f}M collisions/s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
