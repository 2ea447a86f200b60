"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel and problem size with the best-of-N wall time of
each backend, the speed-up, and the largest absolute difference in output.
"""

import argparse
import timeit

import numpy as np

from lgflow import kernels
from lgflow.gof import product_cdf


def cases(rng):
    for n, d in ((256, 2), (512, 4), (2000, 4)):
        x = rng.standard_normal((n, d))
        yield f"orthant_ks n={n} d={d}", "orthant_ks", (x, product_cdf(x))
    x = rng.standard_normal((1000, 4))
    yield "window_ks T=1000 w=64 stride=1", "window_ks", (x, product_cdf(x), 64, 1)
    for D, T in ((4, 5000), (16, 5000)):
        A = rng.standard_normal((D, D)) * 0.9 / np.sqrt(D)
        yield f"affine_recursion D={D} T={T}", "affine_recursion", (A, rng.standard_normal(D),
                                                                      rng.standard_normal(D), T)
        yield f"adjoint_recursion D={D} T={T}", "adjoint_recursion", (A, rng.standard_normal((T, D)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled extension not built; only the Python backend is available")
    names = sorted(impls, key=lambda n: n != "python")
    print(f"{'case':36s}" + "".join(f"{n:>12s}" for n in names) + f"{'speed-up':>10s}{'max diff':>11s}")
    rng = np.random.default_rng(0)
    for label, fn_name, fn_args in cases(rng):
        fn = getattr(kernels, fn_name)
        times, outs = [], []
        for name in names:
            outs.append(np.asarray(fn(*fn_args, impl=name)))
            timer = timeit.Timer(lambda: fn(*fn_args, impl=name))
            number, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, number)) / number)
        speedup = times[0] / times[-1] if len(times) > 1 else 1.0
        diff = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
        print(f"{label:36s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
              + f"{speedup:9.1f}x{diff:11.1e}")


if __name__ == "__main__":
    main()
