"""Compare the compiled kernel backend against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""
import time

import numpy as np

from morphorisk import _pure

try:
    from morphorisk import _fast
except ImportError:
    _fast = None


def _time(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 5, size=(256, 256, 80)).astype(np.uint8)
    hu = rng.integers(-1024, 2000, size=labels.shape).astype(np.int16)
    n = 20000
    scores = rng.normal(size=n)
    y = rng.integers(0, 2, size=n)
    time_v = rng.exponential(100, size=n) + 1
    event = rng.integers(0, 2, size=n)

    cases = [
        ("slice_label_stats (256x256x80)",
         lambda m: m.slice_label_stats(labels, hu)),
        ("auc_stat (n=20000)",
         lambda m: m.auc_stat(scores, y)),
        ("concordance_counts (n=20000)",
         lambda m: m.concordance_counts(scores, time_v.astype(float),
                                        event.astype(np.int64))),
    ]
    print(f"{'kernel':40s} {'pure (s)':>10s} {'compiled (s)':>13s} "
          f"{'speedup':>8s}")
    for name, call in cases:
        t_pure = _time(call, _pure)
        if _fast is None:
            print(f"{name:40s} {t_pure:10.4f} {'n/a':>13s}")
            continue
        t_fast = _time(call, _fast)
        print(f"{name:40s} {t_pure:10.4f} {t_fast:13.4f} "
              f"{t_pure / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
