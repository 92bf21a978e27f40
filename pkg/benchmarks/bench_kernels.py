"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints the best-of-N wall time per call for each kernel and backend, and the
speedup of the compiled one.  Outputs are checked for agreement first.
"""

import argparse
import timeit

import numpy as np

from aeroop import _pykernels

try:
    from aeroop import _ckernels
except ImportError:
    _ckernels = None


def cases(gen):
    x = gen.normal(size=(8, 32, 32, 20))
    z = x + 1j * gen.normal(size=x.shape)
    h = w = 64
    c = gen.uniform(size=(h, w))
    u = gen.uniform(-0.5, 0.5, size=(h, w + 1))
    v = gen.uniform(-0.5, 0.5, size=(h + 1, w))
    u[:, -1] = u[:, 0]
    v[-1] = v[0]
    rates = gen.uniform(size=(16, 4))
    sim = (c, u, v, rates, np.array([3, 20, 40, 60]), np.array([5, 30, 12, 50]), 0.25, 0.1, 0.99, 0.25, True)
    return {
        "gelu_with_grad (163840 reals)": ("gelu_with_grad", (x,)),
        "split_gelu_with_grad (163840 complex)": ("split_gelu_with_grad", (z,)),
        "split_scale (163840 complex)": ("split_scale", (z, z)),
        "advance (64x64, 16 substeps)": ("advance", sim),
    }


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    opts = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; nothing to compare")
        return
    gen = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for label, (name, args) in cases(gen).items():
        py, cc = getattr(_pykernels, name), getattr(_ckernels, name)
        a, b = py(*args), cc(*args)
        for p, q in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.allclose(p, q, rtol=1e-13, atol=1e-14), name
        tp, tc = best(py, args, opts.repeat), best(cc, args, opts.repeat)
        print(f"{label:40s} {tp * 1e3:12.3f} {tc * 1e3:14.3f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
