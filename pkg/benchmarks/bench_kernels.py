"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs each hot kernel (separable Gaussian, geodesic shortest paths, exact
Euclidean distance transform) on a synthetic branching-tube volume with
both backends and prints a timing table. Requires numba to be importable
(run without SKELPROP_NO_NUMBA so both paths are available).

    python3 benchmarks/bench_kernels.py --size 64 --repeats 3
"""

import argparse
import time

import numpy as np

from skelprop import kernels
from skelprop.phantom import PhantomSpec, generate
from skelprop.smoothing import GaussianParams
from skelprop.volume import VolumeGeometry


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        print("numba backend is disabled (SKELPROP_NO_NUMBA set or numba missing); "
              "nothing to compare")
        return

    spec = PhantomSpec(VolumeGeometry((args.size,) * 3), depth=3, seed=args.seed)
    result = generate(spec)
    vol = result.volume.data.astype(np.float64)
    seeds = result.skeleton.linear
    seed_mask = result.skeleton.to_mask().data
    spacing = (1.0, 1.0, 1.0)
    weights = GaussianParams(sigma=1.0).kernel()

    cases = [
        ("gaussian_blur",
         lambda: kernels.gaussian_blur_numba(vol, weights),
         lambda: kernels.gaussian_blur_numpy(vol, weights)),
        ("geodesic (26-conn)",
         lambda: kernels.geodesic_numba(vol, seeds, spacing, 26, 0.0),
         lambda: kernels.geodesic_numpy(vol, seeds, spacing, 26, 0.0)),
        ("edt_squared",
         lambda: kernels.edt_squared_numba(seed_mask, spacing),
         lambda: kernels.edt_squared_numpy(seed_mask, spacing)),
    ]

    print(f"volume {args.size}^3, {len(seeds)} seed voxels, best of {args.repeats}")
    print(f"{'kernel':<20} {'numba [s]':>12} {'numpy [s]':>12} {'speedup':>9}  match")
    for name, fn_nb, fn_np in cases:
        fn_nb()  # compile before timing
        t_nb, out_nb = _time(fn_nb, args.repeats)
        t_np, out_np = _time(fn_np, args.repeats)
        match = np.allclose(out_nb, out_np, atol=1e-9)
        print(f"{name:<20} {t_nb:>12.4f} {t_np:>12.4f} {t_np / t_nb:>8.1f}x  {match}")


if __name__ == "__main__":
    main()
