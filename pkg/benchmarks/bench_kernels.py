"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes follow the desk model: the memory tokenizer conv (64 -> 64 channels,
kernel 2x4x4, stride 1x4x4 over 8x8 latent grids) and Top-K over affinity
rows. Outputs are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from hydra_wm.core import kernels

CASES = {
    "conv3d_forward": lambda rng: ((rng.standard_normal((64, 6, 8, 8)), rng.standard_normal((64, 64, 2, 4, 4)),
                                    (1, 4, 4)), kernels.conv3d_forward),
    "conv3d_backward": lambda rng: ((rng.standard_normal((64, 6, 8, 8)), rng.standard_normal((64, 64, 2, 4, 4)),
                                     rng.standard_normal((64, 5, 2, 2)), (1, 4, 4)), kernels.conv3d_backward),
    "topk_rows 10x8 k=3": lambda rng: ((rng.standard_normal((10, 8)), 3), kernels.topk_rows),
    "topk_rows 4096x64 k=10": lambda rng: ((rng.standard_normal((4096, 64)), 10), kernels.topk_rows),
}


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def flat(out):
    return np.concatenate([np.ravel(o) for o in out]) if isinstance(out, tuple) else np.ravel(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "native" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    prev = kernels.backend_name()
    print(f"{'kernel':<26}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + f"{'speedup':>10}")
    try:
        for name, make in CASES.items():
            call_args, fn = make(np.random.default_rng(0))
            results, timing = {}, {}
            for b in backends:
                kernels.use_backend(b)
                results[b] = flat(fn(*call_args))
                timing[b] = best_of(fn, call_args, args.repeat)
            ref = results["python"]
            for b, r in results.items():
                if not np.allclose(r, ref, rtol=1e-10, atol=1e-10):
                    raise SystemExit(f"{name}: backend {b} disagrees with the fallback")
            speed = timing["python"] / timing["native"] if "native" in timing else float("nan")
            print(f"{name:<26}" + "".join(f"{1e3 * timing[b]:>14.3f}" for b in backends) + f"{speed:>9.1f}x")
    finally:
        kernels.use_backend(prev)


if __name__ == "__main__":
    main()
