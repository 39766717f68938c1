"""Class-incremental data: datasets, class streams and the CILD file format.

Labels are 1-based class ids. A stream fixes a seeded random class order and
cuts it into sessions of ``m`` classes; inside a run, labels are remapped to
incremental ids so that session t introduces ids n_{t-1}+1 .. n_t.

CILD layout (little endian): magic ``CILD``, u32 version (1), u32
class_count, u32 sample_count, u8 rank, u32 dims[rank], then per sample a
u32 label followed by prod(dims) f32 values.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from memcil.errors import ConfigError, ParseError, ProtocolError

MAGIC = b"CILD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB")


@dataclass(frozen=True, eq=False)
class LabeledSet:
    x: np.ndarray
    y: np.ndarray
    dims: tuple
    class_count: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        d = math.prod(self.dims)
        if x.ndim != 2 or x.shape[1] != d or len(y) != len(x):
            raise ConfigError(f"samples {x.shape} / labels {y.shape} do not match dims {self.dims}")
        if len(y) and (y.min() < 1 or y.max() > self.class_count):
            raise ConfigError(f"labels must lie in 1..{self.class_count}")
        if not np.all(np.isfinite(x)):
            raise ConfigError("samples contain non-finite values")

    def __len__(self):
        return len(self.y)

    @property
    def dim(self):
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    train: LabeledSet
    test: LabeledSet

    def __post_init__(self):
        if self.train.dims != self.test.dims or self.train.class_count != self.test.class_count:
            raise ConfigError("train and test splits disagree on dims or class count")

    @property
    def dims(self):
        return self.train.dims

    @property
    def dim(self):
        return self.train.dim

    @property
    def class_count(self):
        return self.train.class_count


@dataclass(frozen=True)
class SynthSpec:
    class_count: int = 10
    dim: int = 16
    per_class_train: int = 50
    per_class_test: int = 100
    separation: float = 4.0
    seed: int = 0
    # (h, w, c) for the image-shaped variant; dim is then h*w*c
    shape: tuple | None = None
    # class means span a random subspace of this dimension (None: all of it)
    mean_rank: int | None = None


def synth_generate(spec: SynthSpec) -> Dataset:
    """Gaussian blobs with unit covariance and class means on a sphere.

    With ``spec.mean_rank`` set, the means lie on the great subsphere of a
    random ``mean_rank``-dimensional subspace, so the class structure has low
    intrinsic dimension while the noise stays isotropic. With ``spec.shape``
    set, class means are smooth images (a 4x4-block pattern upsampled to
    full size) so that downsampling keeps class information.
    """
    if spec.separation <= 0:
        raise ConfigError("separation must be positive")
    rng = np.random.default_rng(spec.seed)
    if spec.shape is not None:
        h, w, c = spec.shape
        if h % 4 or w % 4:
            raise ConfigError("image height and width must be multiples of 4")
        coarse = rng.normal(size=(spec.class_count, h // 4, w // 4, c))
        means = coarse.repeat(4, axis=1).repeat(4, axis=2).reshape(spec.class_count, -1)
        dims = (h, w, c)
    else:
        dims = (spec.dim,)
        if spec.mean_rank is not None:
            if not 1 <= spec.mean_rank <= spec.dim:
                raise ConfigError(f"mean_rank must lie in 1..{spec.dim}")
            basis, _ = np.linalg.qr(rng.normal(size=(spec.dim, spec.mean_rank)))
            means = rng.normal(size=(spec.class_count, spec.mean_rank)) @ basis.T
        else:
            means = rng.normal(size=(spec.class_count, spec.dim))
    means *= spec.separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(per_class):
        labels = np.repeat(np.arange(1, spec.class_count + 1), per_class)
        x = means[labels - 1] + rng.normal(size=(len(labels), means.shape[1]))
        return LabeledSet(x, labels, dims, spec.class_count)

    train = draw(spec.per_class_train)
    test = draw(spec.per_class_test)
    return Dataset(train, test)


@dataclass(frozen=True)
class ClassStream:
    order: tuple  # original class ids in arrival order
    classes_per_session: int

    @property
    def session_count(self):
        return math.ceil(len(self.order) / self.classes_per_session)

    def session_classes(self, t):
        """Original class ids arriving at session t (1-based)."""
        if not 1 <= t <= self.session_count:
            raise ProtocolError(f"session {t} outside 1..{self.session_count}")
        m = self.classes_per_session
        return self.order[(t - 1) * m: t * m]

    def seen_count(self, t):
        return min(t * self.classes_per_session, len(self.order))


def make_stream(class_count, classes_per_session, seed) -> ClassStream:
    if isinstance(class_count, Dataset):
        class_count = class_count.class_count
    if not 1 <= classes_per_session <= class_count:
        raise ConfigError(f"classes per session must lie in 1..{class_count}")
    order = np.random.default_rng(seed).permutation(np.arange(1, class_count + 1))
    return ClassStream(tuple(int(c) for c in order), int(classes_per_session))


@dataclass(frozen=True, eq=False)
class Session:
    t: int
    train_x: np.ndarray
    train_y: np.ndarray  # incremental ids n_{t-1}+1..n_t
    test_x: np.ndarray
    test_y: np.ndarray  # incremental ids 1..n_t
    n_old: int
    n_seen: int


def _remap_table(stream, class_count):
    table = np.zeros(class_count + 1, dtype=np.int64)
    table[np.asarray(stream.order)] = np.arange(1, len(stream.order) + 1)
    return table


def next_session(stream: ClassStream, dataset: Dataset, t) -> Session:
    """New-class training data for session t and the test set of all seen classes."""
    new = np.asarray(stream.session_classes(t))
    seen = np.asarray(stream.order[: stream.seen_count(t)])
    table = _remap_table(stream, dataset.class_count)
    train_mask = np.isin(dataset.train.y, new)
    test_mask = np.isin(dataset.test.y, seen)
    return Session(
        t=t,
        train_x=dataset.train.x[train_mask],
        train_y=table[dataset.train.y[train_mask]],
        test_x=dataset.test.x[test_mask],
        test_y=table[dataset.test.y[test_mask]],
        n_old=stream.seen_count(t - 1) if t > 1 else 0,
        n_seen=stream.seen_count(t),
    )


def save_container(path, split: LabeledSet):
    rank = len(split.dims)
    record = np.dtype([("label", "<u4"), ("values", "<f4", (split.dim,))])
    body = np.empty(len(split), dtype=record)
    body["label"] = split.y
    body["values"] = split.x
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, split.class_count, len(split), rank))
        fh.write(struct.pack(f"<{rank}I", *split.dims))
        fh.write(body.tobytes())


def parse_container(data: bytes) -> LabeledSet:
    if len(data) < _HEADER.size:
        raise ParseError("truncated header", len(data))
    magic, version, class_count, count, rank = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    if rank == 0:
        raise ParseError("rank must be at least 1", 16)
    off = _HEADER.size
    if len(data) < off + 4 * rank:
        raise ParseError("truncated dims", len(data))
    dims = struct.unpack_from(f"<{rank}I", data, off)
    if 0 in dims:
        raise ParseError(f"zero-sized dimension in {dims}", off)
    off += 4 * rank
    d = math.prod(dims)
    record = np.dtype([("label", "<u4"), ("values", "<f4", (d,))])
    expected = off + count * record.itemsize
    if len(data) < expected:
        complete = (len(data) - off) // record.itemsize
        raise ParseError(f"truncated body: {complete} of {count} samples present",
                         off + complete * record.itemsize)
    if len(data) > expected:
        raise ParseError("trailing bytes after last sample", expected)
    body = np.frombuffer(data, dtype=record, count=count, offset=off)
    labels = body["label"].astype(np.int64)
    bad = np.nonzero((labels < 1) | (labels > class_count))[0]
    if len(bad):
        i = int(bad[0])
        raise ParseError(f"label {labels[i]} of sample {i} outside 1..{class_count}",
                         off + i * record.itemsize)
    values = body["values"].astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ParseError("non-finite sample values", off)
    return LabeledSet(values, labels, dims, class_count)


def load_container(path) -> LabeledSet:
    return parse_container(Path(path).read_bytes())


def save_dataset(dataset: Dataset, train_path, test_path):
    save_container(train_path, dataset.train)
    save_container(test_path, dataset.test)


def load_dataset(train_path, test_path=None) -> Dataset:
    """Load a train/test pair. With one path, ``<stem>.train.cild`` naming is
    assumed and the test file is found next to it as ``<stem>.test.cild``.
    """
    train_path = Path(train_path)
    if test_path is None:
        name = train_path.name
        if ".train." not in name:
            raise ConfigError(f"cannot infer test file for {train_path}; pass it explicitly")
        test_path = train_path.with_name(name.replace(".train.", ".test."))
    return Dataset(load_container(train_path), load_container(test_path))
