"""Compare the numba-compiled kernels with their pure-numpy counterparts.

    python3 benchmarks/bench_kernels.py [--messages N] [--repeat R]

The numpy side is always timed. The numba side is skipped when numba is not
installed or CUBETRADE_DISABLE_NUMBA is set. Both sides must return identical
arrays or the run aborts.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cubetrade import _kernels as k


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(n_msg, seed=0):
    rng = np.random.default_rng(seed)
    n_prod, n_topic, n_rows, horizon = 5, 6, 60, 86400
    msg = tuple(k._i64(a) for a in (rng.integers(0, n_prod, n_msg), rng.integers(0, n_topic, n_msg),
                                    np.sort(rng.integers(0, horizon, n_msg))))
    start = rng.integers(0, horizon // 2, n_rows)
    rows = tuple(k._i64(a) for a in (rng.integers(0, n_prod, n_rows), rng.integers(0, n_topic, n_rows),
                                     start, start + rng.integers(horizon // 4, horizon, n_rows)))
    codes = k._i64(rng.integers(0, 5 * 5 * 6, 5 * n_msg))
    ts = k._i64(rng.integers(0, horizon, 5 * n_msg))
    ids = k._i64(np.arange(5 * n_msg))
    cons = k._i64(rng.integers(0, 2**31, 5 * n_msg))
    return {
        "fanout": (lambda: k._fanout_numpy(*msg, *rows), lambda: k._fanout_numba(*msg, *rows)),
        "count_keys": (lambda: k._count_keys_numpy(codes, ts, 3600, 7 * 3600),
                       lambda: k._count_keys_numba(codes, ts, np.int64(3600), np.int64(7 * 3600))),
        "delivery_hash": (lambda: k._delivery_hash_numpy(np.uint64(7), ids, cons),
                          lambda: k._delivery_hash_numba(np.uint64(7), ids, cons)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--messages", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"numba active: {k.USE_NUMBA}   messages: {args.messages}   best of {args.repeat}")
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (np_fn, nb_fn) in workloads(args.messages).items():
        t_np, out_np = best_of(np_fn, args.repeat)
        if not k.USE_NUMBA:
            print(f"{name:<14} {t_np * 1e3:>10.2f} {'-':>10} {'-':>8}")
            continue
        nb_fn()  # compile outside the timed region
        t_nb, out_nb = best_of(nb_fn, args.repeat)
        if not same(out_np, out_nb):
            raise SystemExit(f"{name}: numba and numpy results differ")
        print(f"{name:<14} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
