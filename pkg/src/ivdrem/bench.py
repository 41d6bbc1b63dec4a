"""Benchmark the compiled loop against the pure-Python fallback.

Runs the built-in two-link scenario on both backends at the same step size
and horizon, reports wall time and steps/second, and checks that the final
states agree (same discretization, different arithmetic paths).
"""
from __future__ import annotations

import sys
import time

import numpy as np

from . import backend
from .presets import paper2dof
from .sim import SimConfig, run


def _final_state_gap(trace_a, trace_b):
    last_a, last_b = trace_a[-1], trace_b[-1]
    gap = 0.0
    for name in ("q", "theta_hat", "tau_d_hat"):
        a = np.asarray(getattr(last_a, name))
        b = np.asarray(getattr(last_b, name))
        gap = max(gap, float(np.max(np.abs(a - b) / (1.0 + np.abs(a)))))
    return gap


def run_benchmark(t_end=5.0, h=1e-3, law="proposed", file=sys.stdout):
    scenario = paper2dof()
    config = SimConfig(t_end=t_end, h=h, law=law,
                       decimation=max(1, int(round(t_end / h)) // 50))
    nsteps = config.n_steps
    print(f"benchmark: law={law}, t_end={t_end:g}s, h={h:g} ({nsteps} steps)",
          file=file)

    results = {}
    for name in ("compiled", "python"):
        if name == "compiled" and not backend.HAVE_COMPILED:
            print("compiled: extension not built, skipping", file=file)
            continue
        t0 = time.perf_counter()
        trace, metrics = run(scenario, config, backend=name)
        elapsed = time.perf_counter() - t0
        results[name] = (elapsed, trace)
        print(f"{name:>8}: {elapsed:8.3f} s  ({nsteps / elapsed:10.0f} steps/s)",
              file=file)

    if len(results) == 2:
        speedup = results["python"][0] / results["compiled"][0]
        gap = _final_state_gap(results["compiled"][1], results["python"][1])
        print(f"speedup: {speedup:.1f}x   max relative final-state gap: {gap:.3e}",
              file=file)
    return 0


if __name__ == "__main__":
    sys.exit(run_benchmark())
