"""Time the compiled kernels against their pure-Python / numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--days 1] [--repeat 3]

Compilation time of the numba kernels is reported separately from the
steady-state timings.
"""
import argparse
import time

import numpy as np

from evci_soc._accel import USE_NUMBA
from evci_soc.detector import _scan_loop, _scan_runs
from evci_soc.simulator import SimConfig, _simulate_kernel, kernel_inputs, schedule_sessions


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = SimConfig(duration=int(args.days * 86400))
    _, sim_args = kernel_inputs(cfg, schedule_sessions(cfg))
    rng = np.random.default_rng(0)
    n = cfg.duration * 6
    dm = np.where(rng.random(n) < 0.02, 1.0, 0.0)
    dm[rng.integers(0, n - 10, n // 500)[:, None] + np.arange(10)] = 1.0
    mask = rng.random(n) < 1e-3

    rows = []
    if USE_NUMBA:
        t0 = time.perf_counter()
        _simulate_kernel(*sim_args)
        _scan_loop(dm, mask, 0.5, 10)
        rows.append(("first call (compile or cache load)", time.perf_counter() - t0))
        rows.append(("simulate, numba", best_of(lambda: _simulate_kernel(*sim_args), args.repeat)))
    rows.append(("simulate, python", best_of(lambda: _simulate_kernel.py_func(*sim_args), 1)))
    if USE_NUMBA:
        rows.append(("scan, numba loop", best_of(lambda: _scan_loop(dm, mask, 0.5, 10), args.repeat)))
    rows.append(("scan, numpy runs", best_of(lambda: _scan_runs(dm, mask, 0.5, 10), args.repeat)))
    rows.append(("scan, python loop", best_of(lambda: _scan_loop.py_func(dm, mask, 0.5, 10), 1)))

    print(f"{cfg.duration} simulated seconds, {n} residual samples, numba enabled: {USE_NUMBA}")
    for name, secs in rows:
        print(f"  {name:<36} {secs * 1e3:10.1f} ms")


if __name__ == "__main__":
    main()
