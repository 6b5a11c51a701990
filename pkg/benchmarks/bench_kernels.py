"""Micro-benchmarks of the contraction kernels.

Compares the compiled helpers with the pure-Python fallback on shapes typical
of the boundary sweep, then runs the D-scaling probe of ``boundary_step``.

    python3 benchmarks/bench_kernels.py [--probe] [--Ds 2 3 4]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fpeps import _pycore
from fpeps.backend import COMPILED
from fpeps.studies import scaling_probe


def _operands(D: int, rng):
    Dp = 2 * D * D
    b = rng.standard_normal((Dp, D, D, Dp)) + 1j * rng.standard_normal((Dp, D, D, Dp))
    a = rng.standard_normal((2, D, D, D, D)) + 1j * rng.standard_normal((2, D, D, D, D))
    m = rng.standard_normal((Dp * D * D, Dp)) + 1j * rng.standard_normal((Dp * D * D, Dp))
    return b, a, m


def bench_kernels(Ds, number: int = 20) -> list[tuple]:
    rng = np.random.default_rng(0)
    impls = [("python", _pycore)]
    if COMPILED:
        from fpeps import _core

        impls.append(("compiled", _core))
    rows = []
    for D in Ds:
        b, a, m = _operands(D, rng)
        for name, mod in impls:
            t_dot = min(timeit.repeat(lambda: mod.tdot(b, a, ([1], [1])), number=number, repeat=3)) / number
            t_qr = min(timeit.repeat(lambda: mod.qr(m), number=number, repeat=3)) / number
            rows.append((D, name, t_dot, t_qr))
    return rows


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--Ds", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--probe", action="store_true", help="also run the boundary_step scaling probe")
    args = p.parse_args(argv)
    print(f"compiled core available: {COMPILED}")
    print(f"{'D':>3} {'impl':>9} {'tdot [ms]':>11} {'qr [ms]':>9}")
    for D, name, t_dot, t_qr in bench_kernels(args.Ds):
        print(f"{D:>3} {name:>9} {1e3 * t_dot:>11.3f} {1e3 * t_qr:>9.3f}")
    if args.probe:
        recs, kb, kp = scaling_probe(Ds=(2, 3, 4, 5))
        for r in recs:
            print(f"D={r['D']} D'={r['D_prime']} boundary_step {r['boundary_step_s']:.3f}s "
                  f"pair_environment {r['pair_environment_s']:.3f}s")
        print(f"fitted exponents: boundary_step {kb:.2f}, pair_environment {kp:.2f}")


if __name__ == "__main__":
    main()
