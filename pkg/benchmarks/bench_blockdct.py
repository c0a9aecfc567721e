"""Benchmark the compiled vs pure-numpy block-transform backends.

Runs the fused DCT/quantize/IDCT roundtrip over random planes and
reports throughput for both implementations. Usage:

    python3 benchmarks/bench_blockdct.py --sizes 256 512 1024 --repeats 5
"""

import argparse
import time

import numpy as np

from caplab.jpeg import _blockdct_np
from caplab.jpeg.tables import scale_quant_tables

try:
    from caplab.jpeg import _blockdct as _cython
except ImportError:
    _cython = None


def best_time(fn, plane, qtable, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(plane, qtable)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--qf", type=int, default=80)
    args = parser.parse_args()

    qtable = scale_quant_tables(args.qf).luma
    rng = np.random.default_rng(0)

    print(f"{'size':>6}  {'numpy':>12}  {'cython':>12}  {'speedup':>8}")
    for size in args.sizes:
        plane = rng.random((size, size)) * 256.0 - 128.0
        t_np = best_time(_blockdct_np.roundtrip_plane, plane, qtable, args.repeats)
        mpixps_np = size * size / t_np / 1e6
        if _cython is None:
            print(f"{size:>6}  {mpixps_np:>9.1f} MP/s  {'not built':>12}  {'-':>8}")
            continue
        t_cy = best_time(_cython.roundtrip_plane, plane, qtable, args.repeats)
        mpixps_cy = size * size / t_cy / 1e6
        print(
            f"{size:>6}  {mpixps_np:>9.1f} MP/s  {mpixps_cy:>9.1f} MP/s  "
            f"{t_np / t_cy:>7.2f}x"
        )
        ref = _blockdct_np.roundtrip_plane(plane, qtable)
        got = _cython.roundtrip_plane(plane, qtable)
        assert np.abs(ref - got).max() < 1e-9, "backends disagree"


if __name__ == "__main__":
    main()
