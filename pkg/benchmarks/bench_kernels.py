"""Numba vs numpy timings for the three hot kernels.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Each kernel is run once to trigger compilation, then timed ``repeat``
times; the best time is reported.  Both backends produce the same numbers
(checked here too), so only speed differs.
"""
import argparse
import time

import numpy as np

from marktail.aiyagari import benchmark_calibration, simulate_economy, solve_economy
from marktail.mapmodel import Gaussian, ProcessSpec
from marktail.regimefit import RegimeModel, as_panel, forward_backward, simulate_panel
from marktail.sim import SimConfig, simulate_stopped


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(scale):
    spec = ProcessSpec([[0.9, 0.1], [0.2, 0.8]], 0.97,
                       [[Gaussian(0.01, 0.01), Gaussian(-0.02, 0.04)],
                        [Gaussian(0.03, 0.02), Gaussian(0.0, 0.01)]])
    cfg = SimConfig(int(200_000 * scale), seed=1)
    yield ("stopped paths", f"{cfg.paths} paths",
           lambda b: simulate_stopped(spec, cfg, backend=b).W)

    model = RegimeModel([[0.95, 0.04, 0.01], [0.03, 0.94, 0.03], [0.01, 0.04, 0.95]],
                        [-0.01, 0.0, 0.01], [0.04, 0.01, 0.02])
    Y, L = as_panel(simulate_panel(model, int(2000 * scale), 100, seed=0))
    yield ("forward-backward", f"{Y.shape[0]}x{Y.shape[1]} panel, N=3",
           lambda b: forward_backward(model, Y, L, backend=b)[0])

    econ = benchmark_calibration()
    sol = solve_economy(econ)
    agents = int(20_000 * scale)
    yield ("economy agents", f"{agents} agents x 500 periods",
           lambda b: simulate_economy(econ, sol, agents, 500, seed=0, backend=b).capital)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    print(f"{'kernel':<18} {'size':<28} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for name, size, fn in cases(args.scale):
        tn, a = best_of(lambda: fn("numba"), args.repeat)
        tp, b = best_of(lambda: fn("numpy"), args.repeat)
        np.testing.assert_allclose(a, b, rtol=1e-10)
        print(f"{name:<18} {size:<28} {tn:>9.3f} {tp:>9.3f} {tp / tn:>7.1f}x")


if __name__ == "__main__":
    main()
