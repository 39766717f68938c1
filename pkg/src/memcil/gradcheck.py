"""Finite-difference checks of every loss against every layer type.

Each case builds a small random model (relu or identity extractor layers, a
random head), a random teacher and a random batch, then compares the
analytic gradient of one training loss with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from memcil import losses
from memcil.nn import Model, gradient_check

LOSSES = ("duplet", "duplet_no_replay", "duplet_no_teacher", "plain", "ca_head", "ca_full")
ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class CheckResult:
    loss: str
    activation: str
    seed: int
    error: float


def _random_model(rng, input_dim, hidden, n_classes, activation):
    model = Model.mlp(input_dim, hidden, n_classes, rng=rng, activation=activation)
    model.head_weight = rng.normal(0.0, 0.5, size=model.head_weight.shape)
    model.head_bias = rng.normal(0.0, 0.1, size=model.head_bias.shape)
    return model


def make_case(loss, activation="relu", seed=0, input_dim=5, hidden=(7, 6), n_old=3, n_new=2, batch=4):
    """Return ``(model, fn, names)`` ready for :func:`memcil.nn.gradient_check`."""
    rng = np.random.default_rng([seed, 17])
    p = losses.LossParams(n_old, n_new, lam=float(rng.uniform(0.5, 2.0)))
    model = _random_model(rng, input_dim, hidden, p.n_total, activation)
    teacher = _random_model(rng, input_dim, hidden, n_old, activation)
    x = rng.normal(size=(batch, input_dim))
    x_hat = x + 0.3 * rng.normal(size=x.shape)
    y_new = rng.integers(n_old + 1, p.n_total + 1, size=batch)
    rx = rng.normal(size=(batch + 1, input_dim))
    ry = rng.integers(1, n_old + 1, size=batch + 1)
    names = None
    if loss == "duplet":
        fn = lambda m, _: losses.duplet_batch_loss(m, teacher, (x, x_hat, y_new), (rx, ry), p)
    elif loss == "duplet_no_replay":
        fn = lambda m, _: losses.duplet_batch_loss(m, teacher, (x, x_hat, y_new), None, p)
    elif loss == "duplet_no_teacher":
        fn = lambda m, _: losses.duplet_batch_loss(m, None, (x, x_hat, y_new), (rx, ry), p)
    elif loss == "plain":
        fn = lambda m, _: losses.plain_batch_loss(m, teacher, (x_hat, y_new), (rx, ry), p)
    elif loss == "ca_head":
        y_all = rng.integers(1, p.n_total + 1, size=batch)
        fn = lambda m, _: losses.ca_loss(m, x, y_all)
        names = model.head_parameter_names()
    elif loss == "ca_full":
        y_all = rng.integers(1, p.n_total + 1, size=batch)
        fn = lambda m, _: losses.ca_loss(m, x, y_all, train_extractor=True)
    else:
        raise ValueError(f"unknown loss case {loss!r}")
    return model, fn, names


def check_all(seeds=range(5), eps=1e-6, loss_names=LOSSES, activations=ACTIVATIONS):
    out = []
    for loss in loss_names:
        for act in activations:
            for seed in seeds:
                model, fn, names = make_case(loss, act, seed)
                err = gradient_check(model, fn, None, eps=eps, seed=seed, names=names)
                out.append(CheckResult(loss, act, seed, float(err)))
    return out
