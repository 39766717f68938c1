"""Encoder/decoder pairs that turn real samples into cheaper auxiliary samples.

A codec maps a sample ``x`` to a code ``E(x)`` and back to ``x_hat = D(E(x))``.
Its cost ratio is ``len(E(x)) / len(x)`` as an exact fraction. Codecs are
immutable: ``fit_incremental`` returns a new codec with a new ``codec_id``,
so codes written earlier stay decodable with the version that made them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from memcil.errors import ConfigError, IntegrityError, ShapeError, StateError


@dataclass(frozen=True, eq=False)
class Code:
    payload: np.ndarray
    codec_id: str
    label: int

    def __len__(self):
        return self.payload.shape[0]


def _digest(*parts):
    h = hashlib.sha1()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype="<f8").tobytes())
        else:
            h.update(repr(part).encode())
    return h.hexdigest()[:12]


class Codec:
    kind = None

    input_dim: int
    code_dim: int

    @property
    def codec_id(self):
        raise NotImplementedError

    def cost_ratio(self):
        return Fraction(self.code_dim, self.input_dim)

    def fit_incremental(self, batch):
        """Stateless codecs ignore data."""
        self._check_batch(batch)
        return self

    def _check_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"{self.kind} codec expects dim {self.input_dim}, got shape {np.shape(x)}")
        return x, single

    def encode_array(self, x):
        x, single = self._check_batch(x)
        out = self._encode(x)
        return out[0] if single else out

    def decode_array(self, payload):
        payload = np.asarray(payload, dtype=np.float64)
        single = payload.ndim == 1
        if single:
            payload = payload[None, :]
        if payload.shape[1] != self.code_dim:
            raise ShapeError(f"payload dim {payload.shape[1]} != code dim {self.code_dim}")
        out = self._decode(payload)
        return out[0] if single else out

    def roundtrip(self, x):
        """x_hat = D(E(x)) for a sample or a batch."""
        return self.decode_array(self.encode_array(x))

    def encode(self, x, label=0):
        return Code(self.encode_array(np.asarray(x, dtype=np.float64).reshape(-1)), self.codec_id, int(label))

    def encode_many(self, x, labels):
        payloads = self.encode_array(np.atleast_2d(x))
        cid = self.codec_id
        return [Code(p, cid, int(y)) for p, y in zip(payloads, labels)]

    def decode(self, code: Code):
        if code.codec_id != self.codec_id:
            raise IntegrityError(f"code made by {code.codec_id}, decoding with {self.codec_id}")
        return self.decode_array(code.payload)

    def __repr__(self):
        return f"{type(self).__name__}(id={self.codec_id}, r={self.cost_ratio()})"


class IdentityCodec(Codec):
    kind = "identity"

    def __init__(self, dim):
        self.input_dim = self.code_dim = int(dim)

    @property
    def codec_id(self):
        return f"identity-{self.input_dim}"

    def _encode(self, x):
        return x.copy()

    def _decode(self, payload):
        return payload.copy()


class DownsampleCodec(Codec):
    """Block-mean downsampling of an (h, w, c) image, nearest-neighbour upsampling back."""

    kind = "downsample"

    def __init__(self, shape, factor):
        if len(shape) != 3:
            raise ConfigError("downsample codec needs an (h, w, c) shape")
        self.shape = tuple(int(s) for s in shape)
        self.factor = int(factor)
        h, w, c = self.shape
        if self.factor < 1 or h % self.factor or w % self.factor:
            raise ConfigError(f"factor {factor} must divide both {h} and {w}")
        self.input_dim = h * w * c
        self.code_dim = (h // self.factor) * (w // self.factor) * c

    @property
    def codec_id(self):
        h, w, c = self.shape
        return f"downsample-{h}x{w}x{c}-f{self.factor}"

    def _encode(self, x):
        h, w, c = self.shape
        f = self.factor
        blocks = x.reshape(len(x), h // f, f, w // f, f, c)
        return blocks.mean(axis=(2, 4)).reshape(len(x), -1)

    def _decode(self, payload):
        h, w, c = self.shape
        f = self.factor
        small = payload.reshape(len(payload), h // f, w // f, c)
        return small.repeat(f, axis=1).repeat(f, axis=2).reshape(len(payload), -1)


class PcaCodec(Codec):
    """Projection onto ``k`` principal directions, updated batch by batch.

    Each update stacks the current scaled basis, the centred new batch and a
    mean-shift row, and takes the SVD of that stack (the rank-augmented
    basis). For stationary data this tracks batch PCA over everything seen.
    """

    kind = "pca"

    def __init__(self, dim, k, mean=None, components=None, singular_values=None, n_seen=0,
                 codec_id=None):
        self.input_dim = int(dim)
        self.code_dim = self.k = int(k)
        if not 1 <= self.k <= self.input_dim:
            raise ConfigError(f"pca needs 1 <= k <= d, got k={k}, d={dim}")
        self.n_seen = int(n_seen)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.components = None if components is None else np.asarray(components, dtype=np.float64)
        self.singular_values = (np.zeros(self.k) if singular_values is None
                                else np.asarray(singular_values, dtype=np.float64))
        self._codec_id = codec_id

    @property
    def fitted(self):
        return self.n_seen > 0

    @property
    def codec_id(self):
        if self._codec_id is None:
            if not self.fitted:
                self._codec_id = f"pca-{self.input_dim}-{self.k}-unfitted"
            else:
                self._codec_id = f"pca-{self.input_dim}-{self.k}-" + _digest(
                    self.n_seen, self.mean, self.components)
        return self._codec_id

    def fit_incremental(self, batch):
        x, _ = self._check_batch(batch)
        m = len(x)
        if m == 0:
            raise ShapeError("cannot fit on an empty batch")
        batch_mean = x.mean(axis=0)
        centred = x - batch_mean
        n = self.n_seen
        if n == 0:
            stack = centred
            mean = batch_mean
        else:
            shift = np.sqrt(n * m / (n + m)) * (batch_mean - self.mean)
            stack = np.vstack([self.singular_values[:, None] * self.components, centred, shift])
            mean = self.mean + (m / (n + m)) * (batch_mean - self.mean)
        _, s, vt = np.linalg.svd(stack, full_matrices=False)
        comps = vt[: self.k]
        sv = np.zeros(self.k)
        sv[: len(comps)] = s[: self.k]
        if len(comps) < self.k:
            comps = _complete_basis(comps, self.k)
        comps = _fix_signs(comps)
        return PcaCodec(self.input_dim, self.k, mean, comps, sv, n + m)

    def _require_fit(self):
        if not self.fitted:
            raise StateError("pca codec used before fit_incremental")

    def _encode(self, x):
        self._require_fit()
        return (x - self.mean) @ self.components.T

    def _decode(self, payload):
        self._require_fit()
        return payload @ self.components + self.mean


def _complete_basis(rows, k):
    """Extend orthonormal ``rows`` (r x d) to k orthonormal rows."""
    r, d = rows.shape
    q, _ = np.linalg.qr(np.hstack([rows.T, np.eye(d)]))
    return np.vstack([rows, q[:, r:k].T])


def _fix_signs(rows):
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(len(rows)), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def make_codec(kind, dims, fidelity=None):
    """Build a codec for samples of shape ``dims`` at cost ratio ``fidelity``.

    PCA keeps ``round(fidelity * d)`` components (at least one); downsampling
    uses the integer factor ``sqrt(1 / fidelity)``.
    """
    dims = tuple(int(v) for v in dims)
    d = int(np.prod(dims))
    if kind == "identity":
        return IdentityCodec(d)
    r = Fraction(fidelity).limit_denominator(10_000) if fidelity is not None else None
    if r is None or not 0 < r <= 1:
        raise ConfigError(f"fidelity must lie in (0, 1], got {fidelity}")
    if kind == "pca":
        return PcaCodec(d, max(1, int(round(float(r) * d))))
    if kind == "downsample":
        if len(dims) == 2:
            dims = dims + (1,)
        factor = round((1 / float(r)) ** 0.5)
        if Fraction(1, factor * factor) != r:
            raise ConfigError(f"downsampling cannot realise r={r}; use 1/4, 1/9, 1/16, ...")
        return DownsampleCodec(dims, factor)
    raise ConfigError(f"unknown codec kind {kind!r}")


def fit_incremental(codec, batch):
    return codec.fit_incremental(batch)


def encode(codec, x, label=0):
    return codec.encode(x, label)


def decode(codec, code):
    return codec.decode(code)


def cost_ratio(codec):
    return codec.cost_ratio()
