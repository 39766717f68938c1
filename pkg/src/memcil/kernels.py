"""Backend selection for the numeric kernels.

The compiled extension (``memcil._kernels``) is used when it was built;
otherwise the numpy fallback in ``memcil._kernels_py`` is used. Set
``MEMCIL_KERNELS=python`` to force the fallback, or ``MEMCIL_KERNELS=compiled``
to make a missing extension an import error.
"""

import contextlib
import os

import numpy as np

from memcil import _kernels_py

_choice = os.environ.get("MEMCIL_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"MEMCIL_KERNELS must be auto, python or compiled, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from memcil import _kernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise
        _compiled = None


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_active = _compiled if _compiled is not None else _kernels_py
BACKEND = _active.BACKEND


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route every kernel call through backend ``name``."""
    global _active
    previous = _active
    _active = get_backend(name)
    try:
        yield _active
    finally:
        _active = previous


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dense_forward(x, w, b, relu, backend=None):
    k = backend or _active
    return k.dense_forward(_c(x), _c(w), _c(b), bool(relu))


def dense_backward(x, w, out, grad_out, relu, backend=None):
    k = backend or _active
    return k.dense_backward(_c(x), _c(w), _c(out), _c(grad_out), bool(relu))


def sigmoid_bce(logits, targets, class_weights, sample_weights, backend=None):
    k = backend or _active
    return k.sigmoid_bce(_c(logits), _c(targets), _c(class_weights), _c(sample_weights))


def sigmoid(z, backend=None):
    k = backend or _active
    z = _c(z)
    if z.ndim == 1:
        return k.sigmoid(z[None, :])[0]
    return k.sigmoid(z)
