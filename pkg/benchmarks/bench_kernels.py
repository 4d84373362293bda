"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--items 50000] [--dim 64] [--repeat 5]

Each kernel is timed on identical inputs under both backends and the outputs
are compared: integer outputs (indices, assignments) must match exactly, float
outputs may differ by summation order and their largest relative gap is shown.
"""
import argparse
import time

import numpy as np

from sepsearch import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--items", type=int, default=50_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--queries", type=int, default=256)
    ap.add_argument("--centroids", type=int, default=256)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((args.items, args.dim))
    Q = rng.standard_normal((args.queries, args.dim))
    W = rng.standard_normal((args.dim, args.dim))
    b = rng.standard_normal(args.dim)
    C = rng.standard_normal((args.centroids, args.dim))
    scores = rng.standard_normal(args.items)
    tie_rank = np.arange(args.items, dtype=np.int64)

    cases = {
        "score_rows": lambda: kernels.score_rows(X, Q[0]),
        "dense_forward": lambda: kernels.dense_forward(Q, W, b),
        "topk": lambda: kernels.topk(scores, tie_rank, args.k),
        "kmeans_assign": lambda: kernels.kmeans_assign(X, C),
    }
    backends = kernels.available()
    print(f"backends: {', '.join(backends)}; items={args.items} dim={args.dim} best of {args.repeat}")
    print(f"{'kernel':<15}" + "".join(f"{name:>12}" for name in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn in cases.items():
        timings, outputs = [], []
        for name in backends:
            prev = kernels.use_backend(name)
            try:
                t, out = best_of(fn, args.repeat)
            finally:
                kernels.use_backend(prev)
            timings.append(t)
            outputs.append(out)
        gap = 0.0
        for other in outputs[1:]:
            a = outputs[0] if isinstance(outputs[0], tuple) else (outputs[0],)
            o = other if isinstance(other, tuple) else (other,)
            for x, y in zip(a, o):
                x, y = np.asarray(x), np.asarray(y)
                if x.dtype.kind == "f":
                    gap = max(gap, float((np.abs(x - y) / np.maximum(np.abs(x), 1e-300)).max(initial=0.0)))
                elif not np.array_equal(x, y):
                    raise SystemExit(f"{label}: backends disagree")
        row = f"{label:<15}" + "".join(f"{t * 1e3:>10.3f}ms" for t in timings)
        if len(timings) > 1:
            row += f"{timings[1] / timings[0]:>11.2f}x   max rel gap {gap:.1e}"
        print(row)


if __name__ == "__main__":
    main()
