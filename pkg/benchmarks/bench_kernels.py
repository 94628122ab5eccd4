"""Compare the compiled convolution kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on the shapes the default 32x32 networks produce, then one
full training step under each backend (the step runs in a subprocess so the
backend is chosen at import, as in normal use).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gait import _kernels_py as py

try:
    from gait import _kernels as cy
except ImportError:
    cy = None

STEP_SNIPPET = """
import timeit, numpy as np, gait
from gait import training as tr
cfg = tr.TrainConfig(seed=0)
state = tr.TrainState.initial(cfg)
rng = np.random.default_rng(0)
xs, xt = rng.uniform(-1, 1, (2, 4, 1, 32, 32))
tr.train_step(xs, xt, state, cfg.weights, cfg)
t = min(timeit.repeat(lambda: tr.train_step(xs, xt, state, cfg.weights, cfg), number=1, repeat={repeat}))
print(gait.BACKEND, t)
"""


def cases():
    rng = np.random.default_rng(0)
    # generator 3x3 stride-2 down conv on a padded 16-channel 32x32 map
    xp = rng.normal(size=(4, 16, 34, 34))
    cols = py.im2col(xp, 3, 3, 2)
    # 7x7 output conv (16 -> 1), which takes the direct kernel
    xo = rng.normal(size=(4, 16, 38, 38))
    wo = rng.normal(size=(1, 16, 7, 7))
    go = rng.normal(size=(4, 1, 32, 32))
    return {
        "im2col 16ch 3x3/2": lambda k: k.im2col(xp, 3, 3, 2),
        "col2im 16ch 3x3/2": lambda k: k.col2im(cols, xp.shape, 3, 3, 2),
        "direct fwd 16->1 7x7": lambda k: k.conv_direct(xo, wo, 1),
        "direct dx 16->1 7x7": lambda k: k.conv_direct_input_grad(go, wo, xo.shape, 1),
        "direct dw 16->1 7x7": lambda k: k.conv_direct_weight_grad(go, xo, wo.shape, 1),
    }


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step_time(pure: bool, repeat: int) -> str:
    env = dict(os.environ, GAIT_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return out.stdout.split()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    print(f"{'kernel':<24}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, call in cases().items():
        t_py = bench(lambda: call(py), args.repeat)
        if cy is None:
            print(f"{name:<24}{t_py * 1e3:>10.2f}{'n/a':>11}")
            continue
        t_cy = bench(lambda: call(cy), args.repeat)
        print(f"{name:<24}{t_py * 1e3:>10.2f}{t_cy * 1e3:>11.2f}{t_py / t_cy:>8.1f}x")

    reps = max(3, args.repeat // 4)
    steps = {}
    for pure in (True, False):
        backend, t = train_step_time(pure, reps)
        steps[backend] = float(t)
    print()
    for backend, t in steps.items():
        print(f"train_step (32x32, batch 4) [{backend}]: {t * 1e3:.0f} ms")
    if len(steps) == 2:
        print(f"train_step speedup: {steps['python'] / steps['cython']:.2f}x")


if __name__ == "__main__":
    main()
