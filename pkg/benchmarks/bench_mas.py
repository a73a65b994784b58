"""Compare the numba and numpy monotonic-alignment kernels.

    python3 benchmarks/bench_mas.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from mltts._accel import HAVE_NUMBA
from mltts.alignment import mas_search

SHAPES = [(8, 24), (32, 120), (64, 300), (128, 600)]


def bench(backend: str, scores: np.ndarray, repeat: int) -> float:
    mas_search(scores, backend=backend)  # warm-up (jit compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeat):
        mas_search(scores, backend=backend)
    return (time.perf_counter() - t0) / repeat


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    print(f"{'P x T':>12}" + "".join(f"{b:>14}" for b in backends) + "   agree")
    for p, t in SHAPES:
        s = rng.standard_normal((p, t))
        times = [bench(b, s, args.repeat) for b in backends]
        same = len({mas_search(s, backend=b).assignment.tobytes() for b in backends}) == 1
        print(f"{p:>5} x {t:<5}" + "".join(f"{1e3 * x:>12.3f}ms" for x in times) + f"   {same}")


if __name__ == "__main__":
    main()
