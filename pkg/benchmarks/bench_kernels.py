"""Compare the compiled kernels with the numpy fallback.

Times each kernel on toy-scale shapes (a 64-wide MLP on 16-D inputs, 96-row
batches) and a full training step, then one complete default run per
backend. Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from memcil import kernels, losses
from memcil.experiment import RunConfig, execute
from memcil.nn import SGD, Model, SgdConfig, backward_and_step


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(rng, batch=96, d_in=16, width=64, n_classes=10):
    x = rng.normal(size=(batch, d_in))
    w = rng.normal(size=(width, d_in))
    b = rng.normal(size=width)
    out = np.maximum(x @ w.T + b, 0)
    g = rng.normal(size=out.shape)
    z = rng.normal(size=(batch, n_classes))
    t = rng.uniform(size=z.shape)
    cw = np.ones(n_classes)
    sw = np.full(batch, 1.0 / batch)
    return {
        "dense_forward": lambda k: kernels.dense_forward(x, w, b, True, backend=k),
        "dense_backward": lambda k: kernels.dense_backward(x, w, out, g, True, backend=k),
        "sigmoid_bce": lambda k: kernels.sigmoid_bce(z, t, cw, sw, backend=k),
        "sigmoid": lambda k: kernels.sigmoid(z, backend=k),
    }


def train_step_case(rng):
    model = Model.mlp(16, (64, 64), 10, rng=rng)
    teacher = Model.mlp(16, (64, 64), 8, rng=rng)
    p = losses.LossParams(8, 2)
    x = rng.normal(size=(32, 16))
    x_hat = x + 0.1 * rng.normal(size=x.shape)
    y = rng.integers(9, 11, size=32)
    rx, ry = rng.normal(size=(32, 16)), rng.integers(1, 9, size=32)
    opt = SGD(SgdConfig(0.01))
    fn = lambda m, _: losses.duplet_batch_loss(m, teacher, (x, x_hat, y), (rx, ry), p)
    return lambda: backward_and_step(model, fn, None, opt)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    rows = []
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        times = {be: _best(lambda: fn(kernels.get_backend(be)), args.repeat, 2000) for be in backends}
        rows.append((name, times))
    for label, make, number in (("train_step", train_step_case, 300),
                                ("full_run", None, 1)):
        times = {}
        for be in backends:
            with kernels.use_backend(be):
                if make is not None:
                    step = make(np.random.default_rng(0))
                    times[be] = _best(step, args.repeat, number)
                else:
                    times[be] = _best(lambda: execute(RunConfig()), min(args.repeat, 3), 1)
        rows.append((label, times))

    print(f"{'case':16s} " + " ".join(f"{be:>14s}" for be in backends) + "    speedup")
    for name, times in rows:
        cells = " ".join(f"{times[be] * 1e6:12.1f}us" for be in backends)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:16s} {cells}    {speed:6.2f}x")


if __name__ == "__main__":
    main()
