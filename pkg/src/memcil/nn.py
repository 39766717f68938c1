"""Dense network substrate: an MLP feature extractor with a per-class sigmoid head.

Samples are numpy float64 arrays. A single sample is 1-D; a batch is 2-D
with one sample per row. Parameters are addressed by name
(``layer0.weight``, ..., ``head.weight``, ``head.bias``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from memcil import kernels
from memcil.errors import ConfigError, NumericalError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")


class Model:
    """Feature extractor (stack of Dense layers) followed by a linear head.

    ``forward`` returns sigmoid scores, one per class. The head may have zero
    rows before the first session.
    """

    def __init__(self, layers, head_weight, head_bias, input_dim):
        self.layers = list(layers)
        self.head_weight = np.asarray(head_weight, dtype=np.float64)
        self.head_bias = np.asarray(head_bias, dtype=np.float64)
        self.input_dim = int(input_dim)
        expected = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.weight.shape[1] != expected:
                raise ShapeError(f"layer{i} expects {layer.weight.shape[1]} inputs, gets {expected}")
            expected = layer.weight.shape[0]
        if self.head_weight.ndim != 2 or self.head_weight.shape[1] != expected:
            raise ShapeError(f"head weight {self.head_weight.shape} does not fit feature dim {expected}")
        if self.head_bias.shape != (self.head_weight.shape[0],):
            raise ShapeError("head bias length must equal head rows")

    @classmethod
    def mlp(cls, input_dim, hidden=(64, 64), n_classes=0, rng=None, activation="relu"):
        """He-initialised MLP extractor; the head starts at zero."""
        rng = np.random.default_rng(rng)
        layers = []
        fan_in = input_dim
        for width in hidden:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(width, fan_in))
            layers.append(Dense(w, np.zeros(width), activation))
            fan_in = width
        return cls(layers, np.zeros((n_classes, fan_in)), np.zeros(n_classes), input_dim)

    @property
    def n_classes(self):
        return self.head_weight.shape[0]

    @property
    def feature_dim(self):
        return self.head_weight.shape[1]

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of dim {self.input_dim}, got shape {np.shape(x)}")
        return x, single

    def _run_extractor(self, x):
        acts = [x]
        for layer in self.layers:
            acts.append(kernels.dense_forward(acts[-1], layer.weight, layer.bias,
                                              layer.activation == "relu"))
        return acts

    def extract_features(self, x):
        x, single = self._as_batch(x)
        h = self._run_extractor(x)[-1]
        return h[0] if single else h

    def logits(self, x):
        x, single = self._as_batch(x)
        z = kernels.dense_forward(self._run_extractor(x)[-1], self.head_weight, self.head_bias, False)
        return z[0] if single else z

    def forward(self, x):
        """Per-class scores in (0, 1)."""
        return kernels.sigmoid(self.logits(x))

    def forward_cached(self, x):
        """Logits plus the activations needed by :meth:`backward`."""
        x, _ = self._as_batch(x)
        acts = self._run_extractor(x)
        z = kernels.dense_forward(acts[-1], self.head_weight, self.head_bias, False)
        return z, acts

    def backward(self, acts, grad_logits, extractor=True):
        """Gradients of a scalar loss given its gradient w.r.t. the logits.

        With ``extractor=False`` only the head gradients are computed.
        """
        grads = {}
        gx, gw, gb = kernels.dense_backward(acts[-1], self.head_weight, grad_logits,
                                            grad_logits, False)
        grads["head.weight"], grads["head.bias"] = gw, gb
        if not extractor:
            return grads
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            gx, gw, gb = kernels.dense_backward(acts[i], layer.weight, acts[i + 1], gx,
                                                layer.activation == "relu")
            grads[f"layer{i}.weight"], grads[f"layer{i}.bias"] = gw, gb
        return grads

    def parameters(self):
        """Ordered name -> array mapping; arrays are live views."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.weight"] = layer.weight
            params[f"layer{i}.bias"] = layer.bias
        params["head.weight"] = self.head_weight
        params["head.bias"] = self.head_bias
        return params

    def extractor_parameter_names(self):
        return [n for n in self.parameters() if n.startswith("layer")]

    def head_parameter_names(self):
        return ["head.weight", "head.bias"]

    def __repr__(self):
        widths = [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]
        return f"Model(widths={widths}, n_classes={self.n_classes})"


def forward(model, x):
    return model.forward(x)


def extract_features(model, x):
    return model.extract_features(x)


def clone_snapshot(model):
    """Deep, value-independent copy of ``model`` (used as the frozen teacher)."""
    return copy.deepcopy(model)


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # (epoch, divisor): from that epoch on, the rate is divided by divisor
    schedule: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.schedule = tuple((int(e), float(d)) for e, d in self.schedule)
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if any(d <= 1 for _, d in self.schedule):
            raise ConfigError("schedule divisors must be > 1")

    @classmethod
    def with_default_schedule(cls, epochs, learning_rate=0.1, momentum=0.9,
                              weight_decay=1e-5, divisor=5.0):
        """Divide the rate by ``divisor`` at 60% and 80% of ``epochs``."""
        marks = sorted({max(1, int(round(epochs * f))) for f in (0.6, 0.8)})
        return cls(learning_rate, momentum, weight_decay, tuple((m, divisor) for m in marks if m < epochs))

    def lr_at(self, epoch):
        lr = self.learning_rate
        for start, divisor in self.schedule:
            if epoch >= start:
                lr /= divisor
        return lr


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
    """

    def __init__(self, config: SgdConfig):
        self.config = config
        self.velocity = {}

    def step(self, params, grads, lr, names=None):
        cfg = self.config
        for name in names if names is not None else grads:
            w = params[name]
            g = grads[name]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * w
            if cfg.momentum:
                v = self.velocity.get(name)
                if v is None or v.shape != w.shape:
                    v = g.copy()
                else:
                    v *= cfg.momentum
                    v += g
                self.velocity[name] = v
                g = v
            w -= lr * g


def _check_finite(loss, grads):
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name.split('.')[0]} ({name})")


def backward_and_step(model, loss_grad_fn, batch, optimizer, lr=None, trainable=None):
    """One optimisation step; returns the pre-step batch loss.

    ``loss_grad_fn(model, batch)`` must return ``(loss, grads)`` with grads
    keyed by parameter name. Only ``trainable`` names are updated (all by
    default).
    """
    loss, grads = loss_grad_fn(model, batch)
    _check_finite(loss, grads)
    params = model.parameters()
    names = [n for n in grads if trainable is None or n in trainable]
    optimizer.step(params, grads, optimizer.config.learning_rate if lr is None else lr, names)
    for name in names:
        if not np.all(np.isfinite(params[name])):
            raise NumericalError(f"non-finite parameters in {name.split('.')[0]} after step")
    return loss


def gradient_check(model, loss_grad_fn, batch, eps=1e-6, max_per_param=512, seed=0, names=None):
    """Max relative error between analytic and central-difference gradients.

    Error per entry is |g_a - g_fd| / max(1, |g_a|, |g_fd|). At most
    ``max_per_param`` entries of each parameter array are probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError("eps must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    _, grads = loss_grad_fn(model, batch)
    params = model.parameters()
    worst = 0.0
    for name in names if names is not None else grads:
        w = params[name]
        if not w.flags.c_contiguous:
            raise ShapeError(f"{name} is not contiguous; cannot perturb in place")
        flat = w.reshape(-1)
        if flat.size == 0:
            continue
        idx = np.arange(flat.size)
        if flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        g_analytic = grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_grad_fn(model, batch)[0]
            flat[i] = orig - eps
            down = loss_grad_fn(model, batch)[0]
            flat[i] = orig
            g_fd = (up - down) / (2 * eps)
            ga = g_analytic[i]
            err = abs(ga - g_fd) / max(1.0, abs(ga), abs(g_fd))
            worst = max(worst, err)
    return worst
