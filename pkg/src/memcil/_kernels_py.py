"""Pure numpy implementations of the dense-layer and loss kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same semantics; ``memcil.kernels`` picks one at import time.
"""

import numpy as np

BACKEND = "python"


def dense_forward(x, w, b, relu):
    """Return ``x @ w.T + b``, rectified when ``relu`` is set."""
    z = x @ w.T
    z += b
    if relu:
        np.maximum(z, 0.0, out=z)
    return z


def dense_backward(x, w, out, grad_out, relu):
    """Backpropagate through one dense layer.

    ``out`` is the layer's forward output; for a ReLU layer its positive
    entries mark the active units. Returns ``(grad_x, grad_w, grad_b)``.
    """
    g = grad_out * (out > 0.0) if relu else grad_out
    grad_w = g.T @ x
    grad_b = g.sum(axis=0)
    grad_x = g @ w
    return grad_x, grad_w, grad_b


def sigmoid_bce(logits, targets, class_weights, sample_weights):
    """Weighted binary cross-entropy on sigmoid outputs, computed from logits.

    loss = sum_i sample_weights[i] * sum_k class_weights[k] * BCE(sigmoid(z_ik), t_ik)

    Uses ``softplus(z) - t*z`` so no clamping is needed. Returns
    ``(loss, grad_logits)``.
    """
    z = logits
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    per = (softplus - targets * z) * class_weights
    loss = float(per.sum(axis=1) @ sample_weights)
    p = sigmoid(z)
    grad = (p - targets) * class_weights * sample_weights[:, None]
    return loss, grad


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
