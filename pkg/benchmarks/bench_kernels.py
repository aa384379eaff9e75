"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 250 500 1000] [--repeat 5]

Prints the best-of-``repeat`` wall time per kernel and backend, the
speed-up, and checks that both backends agree on each input.
"""

import argparse
import timeit

import numpy as np

from dcrl import _pykernels
from dcrl.geometry import pairwise_dist

try:
    from dcrl import _ckernels
except ImportError:
    _ckernels = None


def cases(n, rng):
    x = rng.standard_normal((n, 20))
    z = rng.standard_normal((n, 10))
    dx = pairwise_dist(x)
    dz = pairwise_dist(z)
    k = 5
    nbr, _ = _pykernels.knn_select(dz, k)
    same = rng.random((n, k)) < 0.8
    dxe = np.take_along_axis(dx, nbr, axis=1)
    rx = _pykernels.rank_matrix(dx)
    rz = _pykernels.rank_matrix(dz)
    return {
        "knn_select": lambda m: m.knn_select(dz, k),
        "rank_matrix": lambda m: m.rank_matrix(dx),
        "lis_loss_grad": lambda m: m.lis_loss_grad(z, nbr, same, dxe),
        "neighbourhood_sums": lambda m: m.neighbourhood_sums(rx, rz, 1, 10),
    }


def agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(u, dtype=float), np.asarray(v, dtype=float), rtol=1e-9, atol=1e-9) for u, v in zip(a, b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[250, 500, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'N':>6}{'numpy ms':>11}{'cython ms':>11}{'speed-up':>10}  agree")
    for n in args.sizes:
        for name, call in cases(n, rng).items():
            t_py = min(timeit.repeat(lambda: call(_pykernels), number=1, repeat=args.repeat)) * 1e3
            if _ckernels is None:
                print(f"{name:<20}{n:>6}{t_py:>11.2f}{'-':>11}{'-':>10}  -")
                continue
            t_c = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=args.repeat)) * 1e3
            ok = agree(call(_pykernels), call(_ckernels))
            print(f"{name:<20}{n:>6}{t_py:>11.2f}{t_c:>11.2f}{t_py / t_c:>9.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
