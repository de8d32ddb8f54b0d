"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the ESMALAB_DISABLE_NUMBA flag does
not matter here.  Each row checks that the two paths agree before timing.
"""

import argparse
import timeit

import numpy as np

from esmalab._backend import HAVE_NUMBA
from esmalab.kernels import (ball_counts_numba, ball_counts_numpy, conv3x3_adjoint_numba,
                             conv3x3_adjoint_numpy, conv3x3_numba, conv3x3_numpy)


def cases(rng):
    pts2 = rng.standard_normal((2000, 2))
    q2 = rng.standard_normal((2000, 2))
    pts32 = rng.standard_normal((2000, 32))
    q32 = rng.standard_normal((500, 32))
    grids = rng.uniform(0, 1, (64, 3, 32, 32))
    w = rng.uniform(0, 1, (3, 3))
    w /= w.sum()
    yield "ball_counts 2000x2000 d=2", ball_counts_numba, ball_counts_numpy, (pts2, q2, 0.4)
    yield "ball_counts 2000x500 d=32", ball_counts_numba, ball_counts_numpy, (pts32, q32, 6.0)
    yield "conv3x3 64x3x32x32", conv3x3_numba, conv3x3_numpy, (grids, w)
    yield "conv3x3_adjoint 64x3x32x32", conv3x3_adjoint_numba, conv3x3_adjoint_numpy, (grids, w)


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow, fargs in cases(rng):
        a, b = fast(*fargs), slow(*fargs)   # first call also compiles
        assert np.array_equal(a, b) or np.allclose(a, b, rtol=0, atol=1e-12), name
        tf, ts = best_of(fast, fargs, args.repeat), best_of(slow, fargs, args.repeat)
        print(f"{name:<30}{1e3 * tf:>10.2f}{1e3 * ts:>10.2f}{ts / tf:>8.1f}x")


if __name__ == "__main__":
    main()
