"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--step]

``--step`` additionally times one training iteration on the default
synthetic scene under each backend (each in a fresh interpreter, since the
backend is fixed at import by ``PATCHFREE_NO_NUMBA``).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from patchfree import kernels

STEP = """
import time
from patchfree import data as D, freenet, trainer
s = D.generate_synthetic_scene(); s.cube = D.normalize_bands(s.cube)
s.train_mask, s.test_mask = D.random_split(s.labels, 20, 0)
m = freenet.build(freenet.FreeNetConfig(8, 4), 0)
trainer.train(m, s, optimizer=trainer.OptimizerState(max_iter=2), echo=False)
t = time.perf_counter()
trainer.train(m, s, optimizer=trainer.OptimizerState(max_iter=5), echo=False)
print((time.perf_counter() - t) / 5)
"""


def cases(rng):
    x = rng.standard_normal((64, 66, 66)).astype(np.float32)
    cols = kernels.np_im2col(x, 3, 1, 0, 64, 64)
    g = rng.standard_normal((128, 64, 64)).astype(np.float32)
    gamma = np.ones(128, np.float32)
    y, xhat, rstd = kernels.np_group_norm_forward(g, 32, gamma, gamma, 1e-5)
    small = rng.standard_normal((128, 32, 32)).astype(np.float32)
    return {
        "im2col 64x66x66 k3": ("im2col", (x, 3, 1, 0, 64, 64)),
        "col2im 64x66x66 k3": ("col2im", (cols, 64, 66, 66, 3, 1, 64, 64)),
        "group_norm fwd 128x64x64": ("group_norm_forward", (g, 32, gamma, gamma, 1e-5)),
        "group_norm bwd 128x64x64": ("group_norm_backward", (g, xhat, rstd, gamma, 32)),
        "upsample2x 128x32x32": ("upsample2x", (small,)),
        "upsample2x bwd 128x64x64": ("upsample2x_backward", (g,)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--step", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, (name, inputs) in cases(rng).items():
        fnp, fnb = getattr(kernels, "np_" + name), getattr(kernels, "nb_" + name)
        fnb(*inputs)  # compile
        tnp = min(timeit.repeat(lambda: fnp(*inputs), number=1, repeat=args.repeat)) * 1e3
        tnb = min(timeit.repeat(lambda: fnb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<28}{tnp:>10.2f}{tnb:>10.2f}{tnp / tnb:>8.1f}x")
    if args.step:
        for flag in ("1", "0"):
            env = dict(os.environ, PATCHFREE_NO_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", STEP], env=env, capture_output=True,
                                 text=True, check=True).stdout
            backend = "numpy" if flag == "1" else "numba"
            print(f"train step, {backend} backend: {float(out) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
