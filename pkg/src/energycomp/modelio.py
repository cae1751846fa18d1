"""Binary model files.

Layout (all integers little-endian):

  magic "NNCM" | version u32 | input-shape rank u8, dims u32 each |
  class_count u32 | layer count u32 | layers...

Each layer: kind u8 (0 dense, 1 conv2d, 2 factorized_dense,
4-D-kernel variant 3 factorized_conv2d), activation u8 (0 none, 1 relu,
2 softmax_out), shape dims u32 (2 for dense kinds, 4 for conv kinds),
rank u32 for factorized kinds, then the float32 payloads (weights, or
u_fold followed by v_t), the float32 bias payload, and a mask-present
flag u8 followed by the packed bitset when present.

The quantized container (magic "NNCQ", see the bit-overwrite module) reuses
the same structure with bit-packed payloads, which is why the body codec
here is parameterized over payload encode/decode.
"""

from __future__ import annotations

import struct

import numpy as np

from .linalg import FactorPair
from .model import Layer, Model

__all__ = ["FormatError", "load_model", "save_model"]

MAGIC = b"NNCM"
VERSION = 1

_KIND_TAGS = {"dense": 0, "conv2d": 1, "factorized_dense": 2, "factorized_conv2d": 3}
_KIND_NAMES = {v: k for k, v in _KIND_TAGS.items()}
_ACT_TAGS = {"none": 0, "relu": 1, "softmax_out": 2}
_ACT_NAMES = {v: k for k, v in _ACT_TAGS.items()}


class FormatError(ValueError):
    """Corrupt or truncated model file."""


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(
                f"{self.name}: truncated, wanted {count} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def _raw_encode(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _raw_decode(reader: _Reader, count: int) -> np.ndarray:
    return np.frombuffer(reader.take(count * 4), dtype="<f4").astype(np.float32)


def _write_body(out: bytearray, model: Model, encode=_raw_encode):
    out += struct.pack("<B", len(model.input_shape))
    for dim in model.input_shape:
        out += struct.pack("<I", dim)
    out += struct.pack("<I", model.class_count)
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        out += struct.pack("<BB", _KIND_TAGS[layer.kind], _ACT_TAGS[layer.activation])
        if layer.kind == "dense":
            dims = layer.weights.shape
        elif layer.kind == "conv2d":
            dims = layer.weights.shape
        elif layer.kind == "factorized_dense":
            dims = layer.factor.shape
        else:
            in_ch, kh, kw = layer.kernel_geom
            dims = (layer.factor.shape[0], in_ch, kh, kw)
        for dim in dims:
            out += struct.pack("<I", dim)
        if layer.factor is not None:
            out += struct.pack("<I", layer.factor.rank)
            out += encode(layer.factor.u_fold)
            out += encode(layer.factor.v_t)
        else:
            out += encode(layer.weights)
        out += encode(layer.bias)
        if layer.mask is not None:
            out += struct.pack("<B", 1)
            out += np.packbits(layer.mask.reshape(-1)).tobytes()
        else:
            out += struct.pack("<B", 0)


def _read_body(reader: _Reader, decode=_raw_decode) -> Model:
    shape_rank = reader.u8()
    input_shape = tuple(reader.u32() for _ in range(shape_rank))
    class_count = reader.u32()
    layer_count = reader.u32()
    layers = []
    for _ in range(layer_count):
        kind_tag = reader.u8()
        if kind_tag not in _KIND_NAMES:
            raise FormatError(f"{reader.name}: unknown layer kind tag {kind_tag}")
        act_tag = reader.u8()
        if act_tag not in _ACT_NAMES:
            raise FormatError(f"{reader.name}: unknown activation tag {act_tag}")
        kind = _KIND_NAMES[kind_tag]
        activation = _ACT_NAMES[act_tag]
        ndims = 4 if kind in ("conv2d", "factorized_conv2d") else 2
        dims = tuple(reader.u32() for _ in range(ndims))
        weights = mask = factor = None
        kernel_geom = None
        if kind in ("factorized_dense", "factorized_conv2d"):
            rank = reader.u32()
            if kind == "factorized_dense":
                m, n = dims
            else:
                m = dims[0]
                kernel_geom = dims[1:]
                n = int(np.prod(kernel_geom))
            if not 1 <= rank <= min(m, n):
                raise FormatError(f"{reader.name}: rank {rank} invalid for dims {dims}")
            u_fold = decode(reader, m * rank).reshape(m, rank)
            v_t = decode(reader, rank * n).reshape(rank, n)
            factor = FactorPair(u_fold, v_t)
            bias = decode(reader, m)
        else:
            count = int(np.prod(dims))
            weights = decode(reader, count).reshape(dims)
            bias = decode(reader, dims[0])
        if reader.u8():
            count = int(np.prod(dims))
            packed = np.frombuffer(reader.take((count + 7) // 8), dtype=np.uint8)
            mask = np.unpackbits(packed, count=count).astype(bool).reshape(dims)
        layers.append(
            Layer(kind, activation, weights=weights, bias=bias, mask=mask,
                  factor=factor, kernel_geom=kernel_geom)
        )
    try:
        return Model(layers, input_shape, class_count)
    except ValueError as exc:
        raise FormatError(f"{reader.name}: inconsistent model: {exc}") from exc


def save_model(model: Model, path):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    _write_body(out, model)
    with open(path, "wb") as fh:
        fh.write(out)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data, str(path))
    magic = reader.take(4)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    model = _read_body(reader)
    reader.done()
    return model
