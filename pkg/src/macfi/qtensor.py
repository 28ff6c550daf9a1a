"""Quantized tensors and the golden software reference for every layer kind.

All activations and weights are symmetric per-tensor int8 (zero point 0,
``value = scale * q``). Accumulators are signed 32-bit with saturation.
Rounding is round-half-to-even everywhere. The functions here define the
bit-exact semantics the MAC-array emulator must reproduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidScale, ScaleMismatch, ShapeError, UnsupportedLayer

INT8_MIN, INT8_MAX = -128, 127
ACC_MIN, ACC_MAX = -(1 << 31), (1 << 31) - 1
# Extremes of a genuine signed 8x8 multiplier output: (-128)*(-128) and (-128)*127.
PRODUCT_MIN, PRODUCT_MAX = -16256, 16384


def _check_scale(scale: float) -> float:
    scale = float(scale)
    if not (scale > 0.0 and math.isfinite(scale)):
        raise InvalidScale(f"scale must be positive and finite, got {scale!r}")
    return scale


@dataclass(frozen=True)
class QTensor:
    """Signed 8-bit tensor in (C, H, W) layout with a per-tensor scale."""

    data: np.ndarray  # int8, shape (C, H, W)
    scale: float

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.int8)
        if data.ndim != 3:
            raise ShapeError(f"QTensor data must be (C, H, W), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"QTensor dims must be positive, got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale", _check_scale(self.scale))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @classmethod
    def from_flat(cls, dims: tuple[int, int, int], flat, scale: float) -> "QTensor":
        arr = np.asarray(flat, dtype=np.int8).reshape(dims)
        return cls(arr, scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QTensor):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class AccTensor:
    """Signed 32-bit accumulator tensor in (C, H, W) layout."""

    data: np.ndarray  # int32, shape (C, H, W)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.int32)
        if data.ndim != 3:
            raise ShapeError(f"AccTensor data must be (C, H, W), got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AccTensor):
            return NotImplemented
        return np.array_equal(self.data, other.data)


def sat32(v: int) -> int:
    """Clamp an integer to the signed 32-bit range."""
    return ACC_MIN if v < ACC_MIN else ACC_MAX if v > ACC_MAX else v


def quantize(x, scale: float) -> QTensor:
    """Quantize a real (C, H, W) tensor: clamp(round_half_even(x / scale))."""
    scale = _check_scale(scale)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 1, -1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize input must be finite")
    q = np.clip(np.rint(arr / scale), INT8_MIN, INT8_MAX).astype(np.int8)
    return QTensor(q, scale)


def dequantize(t: QTensor) -> np.ndarray:
    return t.data.astype(np.float64) * t.scale


def requantize(acc: int, m: float) -> int:
    """Rescale one 32-bit accumulator value back to int8.

    ``m`` is the combined rescale factor s_in * s_w / s_out.
    """
    m = _check_scale(m)
    # Python round() on a float is round-half-to-even, same as C rint()
    # under the default rounding mode, so this matches requantize_array.
    return min(INT8_MAX, max(INT8_MIN, round(float(acc) * m)))


def requantize_array(acc: np.ndarray, m: float) -> np.ndarray:
    """Vectorized requantize; bit-identical to the scalar form per element."""
    m = _check_scale(m)
    out = np.rint(acc.astype(np.float64) * m)
    return np.clip(out, INT8_MIN, INT8_MAX).astype(np.int8)


def round_half_even_div(numer: np.ndarray, denom: int) -> np.ndarray:
    """Exact round-half-to-even of the rationals ``numer / denom`` (denom > 0).

    Works on integers only, so quotients like 1/3 never go through a lossy
    float representation.
    """
    numer = np.asarray(numer, dtype=np.int64)
    q, r = np.divmod(numer, denom)  # floor division, 0 <= r < denom
    two_r = 2 * r
    round_up = (two_r > denom) | ((two_r == denom) & (q % 2 != 0))
    return q + round_up.astype(np.int64)


def conv_out_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def ref_conv2d(
    input: QTensor,
    weights: np.ndarray,
    bias: np.ndarray,
    stride: int,
    pad: int,
) -> AccTensor:
    """Direct zero-padded convolution in exact integer arithmetic.

    ``weights`` is int8 with shape (Cout, Cin, K, K); ``bias`` is one int32
    per output channel, added once per output element. The exact int64 sum
    is saturated to int32 at the end.
    """
    weights = np.asarray(weights, dtype=np.int8)
    bias = np.asarray(bias, dtype=np.int32)
    if weights.ndim != 4:
        raise ShapeError(f"weights must be (Cout, Cin, K, K), got {weights.shape}")
    cout, cin, k, k2 = weights.shape
    c, h, w = input.dims
    if k != k2:
        raise ShapeError(f"kernels must be square, got {k}x{k2}")
    if cin != c:
        raise ShapeError(f"weight Cin={cin} does not match input C={c}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"stride must be >= 1 and pad >= 0, got {stride}, {pad}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ShapeError(f"kernel {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")

    hout, wout = conv_out_hw(h, w, k, stride, pad)
    padded = np.pad(input.data.astype(np.int64), ((0, 0), (pad, pad), (pad, pad)))
    acc = np.zeros((cout, hout, wout), dtype=np.int64)
    w64 = weights.astype(np.int64)
    for i in range(k):
        for j in range(k):
            window = padded[:, i : i + hout * stride : stride, j : j + wout * stride : stride]
            # (Cout, Cin) x (Cin, Hout, Wout) -> (Cout, Hout, Wout)
            acc += np.tensordot(w64[:, :, i, j], window, axes=([1], [0]))
    acc += bias.astype(np.int64)[:, None, None]
    return AccTensor(np.clip(acc, ACC_MIN, ACC_MAX).astype(np.int32))


def ref_relu(input: QTensor) -> QTensor:
    # Symmetric quantization: the zero level is q == 0.
    return QTensor(np.maximum(input.data, 0), input.scale)


def ref_maxpool(input: QTensor, k: int, stride: int) -> QTensor:
    c, h, w = input.dims
    if k < 1 or stride < 1:
        raise ShapeError(f"pool k and stride must be >= 1, got {k}, {stride}")
    if k > h or k > w:
        raise ShapeError(f"pool window {k} exceeds input {h}x{w}")
    hout, wout = conv_out_hw(h, w, k, stride, 0)
    out = np.full((c, hout, wout), INT8_MIN, dtype=np.int8)
    for i in range(k):
        for j in range(k):
            window = input.data[:, i : i + hout * stride : stride, j : j + wout * stride : stride]
            out = np.maximum(out, window)
    return QTensor(out, input.scale)


def ref_gavgpool(input: QTensor) -> QTensor:
    c, h, w = input.dims
    sums = input.data.astype(np.int64).sum(axis=(1, 2))
    mean = round_half_even_div(sums, h * w)
    return QTensor(mean.reshape(c, 1, 1).astype(np.int8), input.scale)


def ref_add(a: QTensor, b: QTensor) -> QTensor:
    if a.dims != b.dims:
        raise ShapeError(f"add operand dims differ: {a.dims} vs {b.dims}")
    if a.scale != b.scale:
        raise ScaleMismatch(f"add operand scales differ: {a.scale!r} vs {b.scale!r}")
    s = a.data.astype(np.int16) + b.data.astype(np.int16)
    return QTensor(np.clip(s, INT8_MIN, INT8_MAX).astype(np.int8), a.scale)


def ref_execute_layer(layer, inputs: list[QTensor]) -> QTensor:
    """Golden execution of one layer; ``layer`` is a model.LayerSpec.

    conv/fc go through ref_conv2d + requantize; the remaining kinds operate
    directly on int8. fc is a 1x1 convolution and requires a (Cin, 1, 1)
    input.
    """
    kind = layer.kind
    if kind in ("conv", "fc"):
        (x,) = inputs
        if kind == "fc" and x.dims[1:] != (1, 1):
            raise ShapeError(f"fc input must be (Cin, 1, 1), got {x.dims}", layer.id)
        stride = layer.stride if kind == "conv" else 1
        pad = layer.pad if kind == "conv" else 0
        acc = ref_conv2d(x, layer.weights, layer.bias, stride, pad)
        out_scale = x.scale * layer.weight_scale / layer.m
        return QTensor(requantize_array(acc.data, layer.m), out_scale)
    if kind == "relu":
        (x,) = inputs
        return ref_relu(x)
    if kind == "maxpool":
        (x,) = inputs
        return ref_maxpool(x, layer.k, layer.stride)
    if kind == "gavgpool":
        (x,) = inputs
        return ref_gavgpool(x)
    if kind == "add":
        a, b = inputs
        return ref_add(a, b)
    raise UnsupportedLayer(f"unsupported layer kind {kind!r}", getattr(layer, "id", None))
