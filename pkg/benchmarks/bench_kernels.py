"""Compare the compiled and pure-numpy network kernels.

Usage: python3 benchmarks/bench_kernels.py [--sizes 10 50 118 300] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from dpassivity.kernels import _pure

try:
    from dpassivity.kernels import _ckernels
except ImportError:
    _ckernels = None


def inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n))
    B = rng.normal(size=(n, n))
    return (np.ascontiguousarray(G + G.T), np.ascontiguousarray(B + B.T),
            rng.uniform(-0.5, 0.5, n), rng.uniform(0.9, 1.1, n))


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 118, 300])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = {"python": _pure}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("Cython extension not built; timing the numpy backend only")
    print(f"{'kernel':<18} {'n':>5} " + " ".join(f"{b:>12}" for b in backends) + "   speedup")
    for kernel in ("power_injections", "jacobian_blocks"):
        for n in args.sizes:
            data = inputs(n)
            times = {b: best_time(getattr(m, kernel), data, args.repeat)
                     for b, m in backends.items()}
            cells = " ".join(f"{t * 1e6:>10.1f}us" for t in times.values())
            speed = (f"{times['python'] / times['cython']:8.2f}x" if "cython" in times else "")
            print(f"{kernel:<18} {n:>5} {cells} {speed}")


if __name__ == "__main__":
    main()
