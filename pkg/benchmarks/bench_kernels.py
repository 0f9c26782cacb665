"""Compare the compiled and numpy thresholding kernels.

    python benchmarks/bench_kernels.py [--sizes 20,200,500] [--repeat 5]

Reports the best-of-``repeat`` time per call for each kernel and backend, the
speed-up, and the largest absolute difference between backends.  The last
block times a full data-driven GPCA fit with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from matgpca import _kernels_py, covariance, kernels
from matgpca.covariance import DEFAULT_GRID, data_driven_gpca
from matgpca.simulation import gen_series, setting_config

try:
    from matgpca import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _inputs(p, rng):
    A = rng.standard_normal((3 * p, p))
    S = A.T @ A / (3 * p)
    B = rng.standard_normal((3 * p, p))
    S_val = B.T @ B / (3 * p)
    scale = np.abs(rng.standard_normal((p, p))) * 0.05
    scale = 0.5 * (scale + scale.T)
    return S, S_val, scale


def _best(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def bench_kernels(sizes, repeat):
    grid = np.array(DEFAULT_GRID)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'p':>6}{'python (s)':>14}{'cython (s)':>14}{'speed-up':>10}{'max diff':>12}")
    for p in sizes:
        S, S_val, scale = _inputs(p, rng)
        cases = {
            "soft_threshold": lambda m: m.soft_threshold(S, 1.3 * scale),
            "cv_grid_objective": lambda m: m.cv_grid_objective(S, scale, S_val, grid),
            "diagonal_cap": lambda m: m.diagonal_cap(S, scale),
        }
        for name, call in cases.items():
            tp = _best(lambda: call(_kernels_py), repeat)
            if _compiled is None:
                print(f"{name:<20}{p:>6}{tp:>14.3e}{'n/a':>14}{'':>10}{'':>12}")
                continue
            tc = _best(lambda: call(_compiled), repeat)
            diff = np.max(np.abs(np.asarray(call(_kernels_py)) - np.asarray(call(_compiled))))
            print(f"{name:<20}{p:>6}{tp:>14.3e}{tc:>14.3e}{tp / tc:>10.1f}{diff:>12.1e}")


def _use(module):
    kernels.soft_threshold = module.soft_threshold
    kernels.cv_grid_objective = module.cv_grid_objective
    kernels.diagonal_cap = module.diagonal_cap


def bench_fit(repeat):
    X, _ = gen_series(setting_config("A", T=200, cov_case="case2", seed=1))
    print("\nfull data-driven GPCA fit, T=p2=200, p1=20")
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    for name, mod in backends:
        _use(mod)
        t = _best(lambda: data_driven_gpca(X, 3, 3), repeat)
        print(f"  {name:<8}{t:.3f} s")
    _use(_compiled or _kernels_py)
    assert covariance.kernels is kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", default="20,200,500")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels([int(s) for s in args.sizes.split(",")], args.repeat)
    bench_fit(args.repeat)


if __name__ == "__main__":
    main()
