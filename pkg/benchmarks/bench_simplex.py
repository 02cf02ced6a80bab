#!/usr/bin/env python3
"""Benchmark the jitted simplex kernel against the pure-numpy fallback.

Workloads:
  dense      random dense LPs (square-ish)
  wide       few rows, many columns (the discretized-plan shape)
  recommend  the action-recommendation program on random instances
  plan-lp    full plan LPs built from random instances at delta = 0.05

Usage: python3 benchmarks/bench_simplex.py [--repeats N]
The same effect as the env flag CALDESIGN_DISABLE_NUMBA=1 is obtained here
via lp_core.set_kernel, so one process can time both paths.
"""

import argparse
import time

import numpy as np

from caldesign import lp_core
from caldesign.exact import build_actrec_lp
from caldesign.fptas import build_disc_lp, build_grid
from caldesign.lp_core import LinearProgram, set_kernel, solve
from caldesign.model import Instance


def random_instance(rng, n, m, eps):
    theta = np.sort(rng.uniform(0, 1, n))
    lam = rng.dirichlet(np.ones(n))
    v = rng.uniform(-1, 1, (m, 2))
    u = rng.uniform(0, 1, (n, m, 2))
    return Instance(theta, lam, [f"a{k}" for k in range(m)], v, u, eps, 1.0)


def dense_lps(rng, count=30, n_vars=60, n_rows=40):
    out = []
    for _ in range(count):
        A = rng.normal(size=(n_rows, n_vars))
        x0 = rng.uniform(0, 1, n_vars)
        b = A @ x0 + rng.uniform(0.1, 1.0, n_rows)
        cons = [(A[r], "<=", b[r]) for r in range(n_rows)]
        for j in range(n_vars):
            row = np.zeros(n_vars)
            row[j] = 1.0
            cons.append((row, "<=", 3.0))
        out.append(LinearProgram(n_vars, rng.normal(size=n_vars), cons))
    return out


def wide_lps(rng, count=10, n_vars=30_000, n_rows=5):
    out = []
    for _ in range(count):
        A = rng.uniform(0, 1, (n_rows, n_vars))
        b = rng.uniform(1.0, 2.0, n_rows)
        cons = [(A[r], "<=", b[r]) for r in range(n_rows)]
        out.append(LinearProgram(n_vars, rng.uniform(0, 1, n_vars), cons))
    return out


def recommend_lps(rng, count=40):
    return [build_actrec_lp(random_instance(rng, 4, 4, 0.1))
            for _ in range(count)]


def plan_lps(rng, count=6):
    out = []
    for _ in range(count):
        inst = random_instance(rng, 4, 3, 0.05)
        grid = build_grid(inst, 0.05)
        out.append(build_disc_lp(inst, grid)[0])
    return out


def time_batch(lps, kernel, repeats):
    set_kernel(kernel)
    try:
        for lp in lps:      # warm the jit cache before measuring
            solve(lp)
        best = np.inf
        for _ in range(repeats):
            start = time.perf_counter()
            for lp in lps:
                solve(lp)
            best = min(best, time.perf_counter() - start)
        return best
    finally:
        set_kernel(None)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    workloads = [
        ("dense", dense_lps(rng)),
        ("wide", wide_lps(rng)),
        ("recommend", recommend_lps(rng)),
        ("plan-lp", plan_lps(rng)),
    ]
    print(f"{'workload':<12}{'lps':>5}{'numba [s]':>12}{'numpy [s]':>12}"
          f"{'speedup':>10}")
    for name, lps in workloads:
        t_nb = time_batch(lps, "numba", args.repeats)
        t_np = time_batch(lps, "numpy", args.repeats)
        print(f"{name:<12}{len(lps):>5}{t_nb:>12.4f}{t_np:>12.4f}"
              f"{t_np / t_nb:>10.2f}x")
    print("\nkernel default:", lp_core.active_kernel()[0],
          "(set CALDESIGN_DISABLE_NUMBA=1 to force numpy)")


if __name__ == "__main__":
    main()
