"""Forward and backward rasterization timings: compiled core vs pure Python.

Usage: python benchmarks/bench_raster.py [--gaussians 200 1000] [--size 64] [--repeat 3]
"""

import argparse
import time

import numpy as np

from wsplat.renderer import Camera, Gaussians, available_backends, look_at, rasterize, rasterize_backward


def scene(n, rng):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Gaussians(rng.uniform(-0.5, 0.5, size=(n, 3)), rng.uniform(0.02, 0.1, size=(n, 3)), q,
                     rng.uniform(0.2, 0.9, size=n), rng.uniform(size=(n, 3)))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gaussians", type=int, nargs="+", default=[200, 1000])
    p.add_argument("--size", type=int, default=64, help="square image side")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    s = args.size
    cam = Camera(s, s, (s - 1) / 2, (s - 1) / 2, s, s, look_at(np.array([0.4, -2.5, 0.8]), np.zeros(3)))
    backends = available_backends()
    print(f"{'gaussians':>10}{'backend':>9}{'forward ms':>12}{'backward ms':>13}")
    for n in args.gaussians:
        g = scene(n, rng)
        grad = rng.normal(size=(s, s, 3))
        base = {}
        for b in backends:
            out = rasterize(g, cam, backend=b)
            fwd = best_of(lambda: rasterize(g, cam, backend=b), args.repeat)
            bwd = best_of(lambda: rasterize_backward(out, grad), args.repeat)
            base[b] = (fwd, bwd)
            print(f"{n:>10}{b:>9}{fwd * 1e3:>12.2f}{bwd * 1e3:>13.2f}")
        if {"cython", "python"} <= set(base):
            (cf, cb), (pf, pb) = base["cython"], base["python"]
            print(f"{'':>10}{'speedup':>9}{pf / cf:>11.1f}x{pb / cb:>12.1f}x")


if __name__ == "__main__":
    main()
