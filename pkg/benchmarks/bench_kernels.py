"""Compare the compiled and numpy metric kernels on random images.

    python3 benchmarks/bench_kernels.py --size 256 --repeat 20
"""

import argparse
import timeit

import numpy as np

from filmfuse import kernels, metrics


def cases(size, rng):
    a, f = rng.random((2, size, size))
    taps = np.exp(-0.5 * (np.arange(-4, 5) / 1.5) ** 2)
    ga, gf = [np.hypot(*kernels.sobel(x)) for x in (a, f)]
    aa, af = [np.arctan2(*kernels.sobel(x)[::-1]) for x in (a, f)]
    return {
        "sobel": lambda b: kernels.sobel(a, b),
        "correlate_separable": lambda b: kernels.correlate_separable(a, taps / taps.sum(), b),
        "qabf_map": lambda b: kernels.qabf_map(ga, aa, gf, af, metrics.QABF_CONSTS, b),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"{args.size}x{args.size}, best of {args.repeat}, backends: {', '.join(backends)}")
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(args.size, np.random.default_rng(args.seed)).items():
        outs = {b: fn(b) for b in backends}
        if len(backends) > 1:
            ref, got = np.asarray(outs["python"]), np.asarray(outs["cython"])
            assert np.allclose(ref, got, atol=1e-10), f"{name}: backends disagree"
        ms = {b: 1e3 * min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends}
        row = f"{name:<22}" + "".join(f"{ms[b]:>10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{ms['python'] / ms['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
