"""Steganographic-capacity compression: clear low-order bits of every
float32 weight, find how many bits can go before accuracy drops, store only
the surviving high bits, and retrain without ever repopulating the cleared
bits.

The capacity of a model is the largest n such that zeroing the n lowest
bits of every weight keeps accuracy within a threshold (default 1%) of the
baseline; the compression rate is then exactly n/32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import Model
from .modelio import FormatError, _Reader, _read_body, _write_body
from .training import TrainConfig, TrainOutcome, evaluate, train

__all__ = [
    "StegoOutcome",
    "apply_bitmask",
    "capacity_search",
    "overwrite_bits",
    "pack_quantized",
    "retrain_quantized",
    "stego_compression_rate",
    "unpack_quantized",
]

QUANT_MAGIC = b"NNCQ"
QUANT_VERSION = 1


def _bit_mask(n: int) -> np.uint32:
    if not isinstance(n, (int, np.integer)) or not 0 <= n <= 32:
        raise ValueError(f"bit count must be an integer in [0, 32], got {n}")
    return np.uint32(0) if n == 32 else np.uint32((0xFFFFFFFF << n) & 0xFFFFFFFF)


def overwrite_bits(w, n: int):
    """Clear the n least-significant bits of the IEEE-754 pattern of w.

    Accepts a scalar or an ndarray; n=0 is the identity, n=32 yields +0.0.
    """
    mask = _bit_mask(n)
    arr = np.asarray(w, dtype=np.float32)
    out = (arr.view(np.uint32) & mask).view(np.float32)
    if np.isscalar(w) or arr.ndim == 0:
        return np.float32(out)
    return out


def stego_compression_rate(capacity_bits: int) -> float:
    """Fraction of each 32-bit weight that need not be stored."""
    if not 0 <= capacity_bits <= 32:
        raise ValueError(f"capacity must lie in [0, 32], got {capacity_bits}")
    return capacity_bits / 32


@dataclass
class StegoOutcome:
    capacity_bits: int
    compression_rate: float
    baseline_accuracy: float
    compressed_accuracy: float
    accuracy_curve: list[tuple[int, float]]   # (bits overwritten, accuracy)


def apply_bitmask(model: Model, n: int) -> Model:
    """Copy of the model with the n low bits cleared in every weight, factor
    entry, and bias. Prune masks are left untouched."""
    out = model.copy()
    _mask_in_place(out, n)
    return out


def _mask_in_place(model: Model, n: int):
    for layer in model.layers:
        if layer.weights is not None:
            layer.weights = overwrite_bits(layer.weights, n)
            if layer.mask is not None:
                layer.weights *= layer.mask
        if layer.factor is not None:
            layer.factor.u_fold[...] = overwrite_bits(layer.factor.u_fold, n)
            layer.factor.v_t[...] = overwrite_bits(layer.factor.v_t, n)
        layer.bias = overwrite_bits(layer.bias, n)


def capacity_search(model: Model, eval_x, eval_y, threshold: float = 0.01,
                    evaluator=None) -> StegoOutcome:
    """Scan n = 1..32, overwriting a fresh copy each step, and stop at the
    first accuracy drop beyond the threshold.

    The returned capacity is the last n before the violation; the recorded
    curve includes the violating point so the full accuracy-vs-bits profile
    can be plotted.
    """
    if evaluator is None:
        evaluator = lambda m: evaluate(m, eval_x, eval_y)
    baseline = evaluator(model)
    curve = [(0, baseline)]
    capacity = 32
    for n in range(1, 33):
        acc = evaluator(apply_bitmask(model, n))
        curve.append((n, acc))
        if acc < baseline - threshold:
            capacity = n - 1
            break
    return StegoOutcome(
        capacity_bits=capacity,
        compression_rate=stego_compression_rate(capacity),
        baseline_accuracy=baseline,
        compressed_accuracy=curve[capacity][1],
        accuracy_curve=curve,
    )


def _layer_params(layer) -> dict:
    if layer.factor is not None:
        return {"u_fold": layer.factor.u_fold, "v_t": layer.factor.v_t,
                "bias": layer.bias}
    return {"weights": layer.weights, "bias": layer.bias}


def retrain_quantized(model: Model, n: int, dataset, cfg: TrainConfig,
                      meter=None) -> TrainOutcome:
    """Straight-through quantized training: the stored weights stay bit-masked
    at n through every step, so the advertised compression rate holds the
    whole time.

    Gradients are computed on the masked weights; the optimizer's updates
    accumulate in a full-precision shadow (optimizer state, like the momentum
    buffers), and after each step the stored weights become the masked
    projection of that shadow. Without the shadow, the masking would floor
    every small update toward zero and training would only ever shrink
    weights. With n=0 the projection is the identity and training is
    bitwise-identical to the ordinary loop.
    """
    _mask_in_place(model, n)
    if n == 0:
        return train(model, dataset, cfg, meter=meter)
    shadow = [{k: v.copy() for k, v in _layer_params(l).items()}
              for l in model.layers]

    def reproject(m: Model):
        # sgd_step has just applied this step's update on top of the masked
        # weights; carry the same update into the shadow, then re-mask.
        for layer, shade in zip(m.layers, shadow):
            params = _layer_params(layer)
            for name, arr in params.items():
                step = arr - overwrite_bits(shade[name], n)
                shade[name] += step
                arr[...] = overwrite_bits(shade[name], n)

    return train(model, dataset, cfg, meter=meter, post_step=reproject)


# ---------------------------------------------------------------------------
# bit-packed storage
# ---------------------------------------------------------------------------


def _pack_f32(arr: np.ndarray, n: int) -> bytes:
    """Keep only the top 32-n bits of each float, bit-packed MSB-first.
    Output is ceil(count*(32-n)/8) bytes."""
    width = 32 - n
    if width == 0:
        return b""
    u = np.ascontiguousarray(arr, dtype=np.float32).reshape(-1).view(np.uint32)
    bits = np.unpackbits(u.astype(">u4").view(np.uint8)).reshape(-1, 32)
    return np.packbits(bits[:, :width].reshape(-1)).tobytes()


def _unpack_f32(reader: _Reader, count: int, n: int) -> np.ndarray:
    width = 32 - n
    if width == 0:
        return np.zeros(count, dtype=np.float32)
    payload = reader.take((count * width + 7) // 8)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count * width)
    full = np.zeros((count, 32), dtype=np.uint8)
    full[:, :width] = bits.reshape(count, width)
    u = np.packbits(full.reshape(-1)).view(">u4").astype(np.uint32)
    return u.view(np.float32)


def pack_quantized(model: Model, n: int) -> bytes:
    """Serialize a bit-masked model storing only the 32-n surviving bits per
    float. The model must already be masked at n; packing an unmasked model
    would silently lose information, so that is rejected."""
    mask = _bit_mask(n)
    inverse = np.uint32(~mask & np.uint32(0xFFFFFFFF))

    def encode(arr: np.ndarray) -> bytes:
        u = np.ascontiguousarray(arr, dtype=np.float32).reshape(-1).view(np.uint32)
        if n < 32 and np.any(u & inverse):
            raise ValueError(f"model is not bit-masked at n={n}; mask it first")
        return _pack_f32(arr, n)

    out = bytearray()
    out += QUANT_MAGIC
    out += struct.pack("<I", QUANT_VERSION)
    out += struct.pack("<B", n)
    _write_body(out, model, encode=encode)
    return bytes(out)


def unpack_quantized(data: bytes) -> Model:
    """Inverse of pack_quantized; reproduces the masked model bitwise."""
    reader = _Reader(data, "quantized model")
    magic = reader.take(4)
    if magic != QUANT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QUANT_MAGIC!r}")
    version = reader.u32()
    if version != QUANT_VERSION:
        raise FormatError(f"unsupported version {version}, expected {QUANT_VERSION}")
    n = reader.u8()
    if n > 32:
        raise FormatError(f"bit count {n} out of range [0, 32]")
    model = _read_body(reader, decode=lambda r, count: _unpack_f32(r, count, n))
    reader.done()
    return model
