#!/usr/bin/env python3
"""Measure both execution kernels on the bundled desk-scale model.

The compiled extension and the pure-Python kernel are interchangeable
(bit-identical results; see tests/test_kernel_backends.py), so the only
question is speed. Reports best-of-N inference rates and the speedup.
"""

import argparse
import time

from macfi.deskmodel import build_desk_dataset, build_desk_model
from macfi.macarray import Emulator, available_backends
from macfi.planner import plan_model


def bench(plan, dataset, backend: str, repeats: int) -> float:
    emu = Emulator(plan, kernel=backend)
    n = len(dataset)
    for i in range(n):  # warmup
        emu.run(dataset.sample(i))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for i in range(n):
            emu.run(dataset.sample(i))
        best = min(best, time.perf_counter() - t0)
    return n / best


def main():
    ap = argparse.ArgumentParser(description="kernel backend benchmark")
    ap.add_argument("--samples", type=int, default=64, help="inferences per pass")
    ap.add_argument("--repeats", type=int, default=5, help="timed passes; best wins")
    args = ap.parse_args()

    g = build_desk_model()
    ds = build_desk_dataset(g, args.samples)
    plan = plan_model(g)
    print(f"model: desk-scale residual CNN, {plan.total_micro_ops} micro-ops/inference")
    print(f"workload: {len(ds)} inferences/pass, best of {args.repeats} passes")
    rates = {}
    for backend in available_backends():
        rates[backend] = bench(plan, ds, backend, args.repeats)
        print(f"  {backend:>8}: {rates[backend]:10.1f} inferences/s")
    if "compiled" in rates:
        print(f"speedup (compiled vs python): {rates['compiled'] / rates['python']:.1f}x")


if __name__ == "__main__":
    main()
