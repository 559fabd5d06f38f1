"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--epochs 2]

Every backend is checked to give bit-identical results before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from approxgrad import _kernels
from approxgrad.appgemm import app_gemm, app_gemm_backward
from approxgrad.data import make_synthetic
from approxgrad.gradest import build_grad1d, build_grad2d
from approxgrad.multlib import build_truncated
from approxgrad.retrain import ModelSpec, TrainConfig, train

SHAPES = [(32, 16, 64), (32, 32, 64), (128, 128, 128)]


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _outputs(res):
    return res if isinstance(res, tuple) else (res,)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=2)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")
    m = build_truncated(7, 6)
    g2x, g2w = build_grad2d(m, "x"), build_grad2d(m, "w")
    g1x, g1w = build_grad1d(m, "x"), build_grad1d(m, "w")
    rng = np.random.default_rng(0)

    rows = []
    for M, K, N in SHAPES:
        W = rng.integers(0, 128, (M, K))
        X = rng.integers(0, 128, (K, N))
        dY = rng.standard_normal((M, N))
        ops = {
            "gemm": lambda b: app_gemm(W, X, m, backend=b),
            "backward-2d": lambda b: app_gemm_backward(dY, W, X, g2x, g2w, m, backend=b),
            "backward-1d": lambda b: app_gemm_backward(dY, W, X, g1x, g1w, m, backend=b),
        }
        for name, fn in ops.items():
            ref = [np.asarray(a) for a in _outputs(fn(backends[0]))]
            for b in backends[1:]:
                out = _outputs(fn(b))
                if not all(np.array_equal(x, y) for x, y in zip(ref, out)):
                    raise SystemExit(f"backend mismatch: {name} {b}")
            rows.append((f"{name} {M}x{K}x{N}", {b: best_of(lambda: fn(b), args.repeat) for b in backends}))

    data = make_synthetic(0)
    model = ModelSpec((16, 32, 32, 2), bits=7)
    for kind in ("ste", "lut2d"):
        cfg = TrainConfig(epochs=args.epochs, estimator=kind)
        rows.append((f"train {kind} {args.epochs} ep",
                     {b: best_of(lambda: train(model, data, cfg, m, backend=b), 1) for b in backends}))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':{width}s}  " + "  ".join(f"{b:>10s}" for b in backends) + ("  speedup" if len(backends) > 1 else ""))
    for name, t in rows:
        line = f"{name:{width}s}  " + "  ".join(f"{t[b] * 1e3:8.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"  {t['numpy'] / t['cython']:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
