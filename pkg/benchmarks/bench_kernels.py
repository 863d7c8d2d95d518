"""Compare the compiled kernels with the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat 50] [--samples 120]

Shapes default to one vehicle's local training job in the reference
scenario (about 84 training samples of 20 features, 16 hidden units,
10 classes, 2 epochs of batch 10).
"""
import argparse
import statistics
import time

import numpy as np

from secure_hfl import _kernels_py

try:
    from secure_hfl import _kernels
except ImportError:  # extension not built
    _kernels = None


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench(impl, args, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    n_in, n_hidden, n_out = args.features, args.hidden, args.classes
    size = n_in * n_hidden + n_hidden + n_hidden * n_out + n_out
    params0 = rng.normal(0, 0.1, size)
    X = rng.normal(size=(args.samples, n_in))
    y = rng.integers(0, n_out, args.samples).astype(np.int64)
    order = np.concatenate([rng.permutation(args.samples) for _ in range(args.epochs)]).astype(np.int64)
    a = rng.normal(size=size)
    b = rng.normal(size=size)

    def train():
        p = params0.copy()
        impl.sgd_train(p, X, y, order, n_hidden, n_out, args.lr, args.batch)
        return p

    return {
        "sgd_train": _time(train, args.repeat),
        "dot_norms": _time(lambda: impl.dot_norms(a, b), args.repeat),
    }, train()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--samples", type=int, default=84)
    parser.add_argument("--features", type=int, default=20)
    parser.add_argument("--hidden", type=int, default=16)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--batch", type=int, default=10)
    parser.add_argument("--lr", type=float, default=0.05)
    args = parser.parse_args(argv)

    py_times, py_params = bench(_kernels_py, args)
    if _kernels is None:
        print("compiled extension not built; numpy timings only")
        for k, v in py_times.items():
            print(f"{k:10s} numpy {v * 1e6:9.1f} us")
        return
    cy_times, cy_params = bench(_kernels, args)
    print(f"{'kernel':10s} {'cython us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for k in py_times:
        print(f"{k:10s} {cy_times[k] * 1e6:10.1f} {py_times[k] * 1e6:10.1f} {py_times[k] / cy_times[k]:7.1f}x")
    print(f"max |params difference| after sgd_train: {np.max(np.abs(cy_params - py_params)):.2e}")


if __name__ == "__main__":
    main()
