"""CILC binary blobs for codecs and memory buffers (used to resume runs).

All integers and floats are little endian; real values are stored as f32, so
a reloaded PCA codec or buffer matches the original to float32 precision.
Codec ids are stored verbatim so reloaded codes still find their codec.

    blob   := "CILC" u32 version u8 kind body
    codec  := str id, then
              identity:   u32 d
              pca:        u32 d, u32 k, u64 n_seen, f32 mean[d], f32 comps[k*d], f32 sv[k]
              downsample: u32 h, u32 w, u32 c, u32 factor
    buffer := u64 budget, u64 written, u64 evicted, u32 n_classes,
              n_classes * (u32 class_id, u32 count, count * (str codec_id, u32 len, f32 payload[len]))
    str    := u16 length, utf-8 bytes
"""

from __future__ import annotations

import struct

import numpy as np

from memcil.codec import Code, DownsampleCodec, IdentityCodec, PcaCodec
from memcil.errors import ParseError
from memcil.memory import MemoryBuffer

MAGIC = b"CILC"
VERSION = 1
KIND_IDENTITY, KIND_PCA, KIND_DOWNSAMPLE, KIND_BUFFER = 0, 1, 2, 16
_KINDS = {"identity": KIND_IDENTITY, "pca": KIND_PCA, "downsample": KIND_DOWNSAMPLE}


class _Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def string(self, s):
        raw = s.encode()
        self.pack("H", len(raw))
        self.parts.append(raw)

    def floats(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def unpack(self, fmt):
        st = struct.Struct("<" + fmt)
        if self.off + st.size > len(self.data):
            raise ParseError("truncated blob", self.off)
        values = st.unpack_from(self.data, self.off)
        self.off += st.size
        return values if len(values) > 1 else values[0]

    def string(self):
        n = self.unpack("H")
        if self.off + n > len(self.data):
            raise ParseError("truncated string", self.off)
        raw = self.data[self.off: self.off + n]
        self.off += n
        try:
            return raw.decode()
        except UnicodeDecodeError as exc:
            raise ParseError("string is not utf-8", self.off - n) from exc

    def floats(self, n):
        end = self.off + 4 * n
        if end > len(self.data):
            raise ParseError(f"truncated array of {n} floats", self.off)
        out = np.frombuffer(self.data, dtype="<f4", count=n, offset=self.off).astype(np.float64)
        self.off = end
        return out

    def finish(self):
        if self.off != len(self.data):
            raise ParseError("trailing bytes", self.off)


def _header(w, kind):
    w.parts.append(MAGIC)
    w.pack("IB", VERSION, kind)


def _read_header(r):
    if r.data[:4] != MAGIC:
        raise ParseError(f"bad magic {bytes(r.data[:4])!r}", 0)
    r.off = 4
    version, kind = r.unpack("IB")
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    return kind


def _write_codec_body(w, codec):
    w.string(codec.codec_id)
    if codec.kind == "identity":
        w.pack("I", codec.input_dim)
    elif codec.kind == "pca":
        if not codec.fitted:
            raise ValueError("refusing to serialise an unfitted pca codec")
        w.pack("IIQ", codec.input_dim, codec.k, codec.n_seen)
        w.floats(codec.mean)
        w.floats(codec.components)
        w.floats(codec.singular_values)
    elif codec.kind == "downsample":
        w.pack("IIII", *codec.shape, codec.factor)
    else:
        raise ValueError(f"cannot serialise codec kind {codec.kind!r}")


def dump_codec(codec) -> bytes:
    w = _Writer()
    _header(w, _KINDS[codec.kind])
    _write_codec_body(w, codec)
    return w.bytes()


def load_codec(data: bytes):
    r = _Reader(data)
    kind = _read_header(r)
    cid = r.string()
    if kind == KIND_IDENTITY:
        codec = IdentityCodec(r.unpack("I"))
    elif kind == KIND_PCA:
        d, k, n_seen = r.unpack("IIQ")
        mean = r.floats(d)
        comps = r.floats(k * d).reshape(k, d)
        sv = r.floats(k)
        codec = PcaCodec(d, k, mean, comps, sv, n_seen, codec_id=cid)
    elif kind == KIND_DOWNSAMPLE:
        h, w_, c, f = r.unpack("IIII")
        codec = DownsampleCodec((h, w_, c), f)
    else:
        raise ParseError(f"unknown codec kind tag {kind}", 8)
    r.finish()
    if codec.codec_id != cid:
        raise ParseError(f"codec id {cid} does not match parameters ({codec.codec_id})", 9)
    return codec


def dump_buffer(buffer: MemoryBuffer) -> bytes:
    w = _Writer()
    _header(w, KIND_BUFFER)
    w.pack("QQQI", buffer.budget_units, buffer.written, buffer.evicted, len(buffer.per_class))
    for c in buffer.classes():
        codes = buffer.per_class[c]
        w.pack("II", c, len(codes))
        for code in codes:
            w.string(code.codec_id)
            w.pack("I", len(code))
            w.floats(code.payload)
    return w.bytes()


def load_buffer(data: bytes) -> MemoryBuffer:
    r = _Reader(data)
    kind = _read_header(r)
    if kind != KIND_BUFFER:
        raise ParseError(f"expected a buffer blob, found kind tag {kind}", 8)
    budget, written, evicted, n_classes = r.unpack("QQQI")
    buf = MemoryBuffer(budget)
    for _ in range(n_classes):
        at = r.off
        c, count = r.unpack("II")
        if c in buf.per_class:
            raise ParseError(f"class {c} appears twice", at)
        codes = []
        for _ in range(count):
            cid = r.string()
            n = r.unpack("I")
            codes.append(Code(r.floats(n), cid, c))
        buf.per_class[c] = codes
        buf.used_units += sum(len(code) for code in codes)
    r.finish()
    if buf.used_units > budget:
        raise ParseError(f"stored codes use {buf.used_units} units, budget is {budget}", 13)
    buf.written, buf.evicted = written, evicted
    return buf
