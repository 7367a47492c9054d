"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32]

Part one calls both variants of every kernel directly on the shapes the
standard network sees. Part two runs a full training step (forward, backward,
RMSprop update) in two subprocesses, one with ``VSEG_DISABLE_NUMBA=1``, since
the backend is fixed at import time.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from vseg import kernels
from vseg._accel import HAVE_NUMBA

STEP_SNIPPET = """
import json, sys, timeit
import numpy as np
from vseg import kernels
from vseg.network import build_network
from vseg.optim import RMSprop, cross_entropy
batch, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
x = rng.random((batch, 1, 28, 28)).astype(np.float32)
y = (rng.random((batch, 28, 28)) < 0.15).astype(np.uint8)
net = build_network(0).train()
opt = RMSprop()
def step():
    loss, g = cross_entropy(y, net.forward(x))
    net.backward(g)
    opt.step(net.params(), net.grads())
step()  # compile / warm caches
best = min(timeit.repeat(step, number=1, repeat=repeat))
print(json.dumps({"backend": kernels.BACKEND, "step_s": best}))
"""


def best_of(fn, repeat):
    fn()  # first call compiles the numba variant
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch, rng):
    x32 = rng.random((batch, 32, 28, 28)).astype(np.float32)
    xp = np.pad(x32, ((0, 0), (0, 0), (1, 1), (1, 1)))
    rows = kernels.im2col3x3_np(xp)
    pooled, arg = kernels.maxpool2x2_forward_np(x32)
    img = rng.integers(0, 256, size=(584, 565)).astype(np.uint8)
    luts = rng.random((8, 8, 256)) * 255
    cy = (np.arange(8) + 0.5) * 584 / 8
    cx = (np.arange(8) + 0.5) * 565 / 8
    preds = rng.random((256, 28, 28))
    oy = rng.integers(0, 584 - 28, size=256)
    ox = rng.integers(0, 565 - 28, size=256)

    def stitch(variant):
        def run():
            acc = np.zeros((584, 565))
            cnt = np.zeros((584, 565), dtype=np.int64)
            variant(acc, cnt, preds, oy, ox)
        return run

    return {
        "im2col3x3": (lambda: kernels.im2col3x3_np(xp), lambda: kernels.im2col3x3_nb(xp)),
        "col2im3x3": (lambda: kernels.col2im3x3_np(rows, batch, 28, 28),
                      lambda: kernels.col2im3x3_nb(rows, batch, 28, 28)),
        "maxpool_fwd": (lambda: kernels.maxpool2x2_forward_np(x32), lambda: kernels.maxpool2x2_forward_nb(x32)),
        "maxpool_bwd": (lambda: kernels.maxpool2x2_backward_np(pooled, arg),
                        lambda: kernels.maxpool2x2_backward_nb(pooled, arg)),
        "clahe_interp": (lambda: kernels.clahe_interpolate_np(img, luts, cy, cx),
                         lambda: kernels.clahe_interpolate_nb(img, luts, cy, cx)),
        "stitch_256": (stitch(kernels.stitch_accumulate_np), stitch(kernels.stitch_accumulate_nb)),
    }


def train_step(disable_numba, batch, repeat):
    env = dict(os.environ, VSEG_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET, str(batch), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--skip-step", action="store_true", help="only time the individual kernels")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'kernel':14s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn) in kernel_cases(args.batch, np.random.default_rng(0)).items():
        t_np, t_nb = best_of(np_fn, args.repeat), best_of(nb_fn, args.repeat)
        print(f"{name:14s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.2f}x")

    if not args.skip_step:
        nb = train_step(False, args.batch, args.repeat)
        py = train_step(True, args.batch, args.repeat)
        print(f"\ntrain step, batch {args.batch}: numpy {py['step_s']:.3f}s, numba {nb['step_s']:.3f}s, "
              f"speedup {py['step_s'] / nb['step_s']:.2f}x")


if __name__ == "__main__":
    main()
