"""Asymmetric uniform activation quantization at layer or channel granularity.

Rounding is round-half-to-even throughout (``np.rint``). Parameters are
computed in float64 from the float32 activation range; codes are stored as
uint8 for every bit-width in [2, 8].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ._kernels import prescale_channel_major, quantize_codes
from .tensor import ActivationTensor, DecomposedView, Shape, channel_min_max, decompose

MIN_BITS = 2
MAX_BITS = 8
DEGENERATE_RANGE = 1e-12


class Granularity(str, enum.Enum):
    LAYER = "layerwise"
    CHANNEL = "channelwise"


class QuantParamError(ValueError):
    pass


class QuantShapeError(ValueError):
    pass


def check_bits(bits: int) -> int:
    if isinstance(bits, bool) or int(bits) != bits or not MIN_BITS <= bits <= MAX_BITS:
        raise QuantParamError(f"bit-width must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits!r}")
    return int(bits)


@dataclass(frozen=True, eq=False)
class QuantParams:
    scale: np.ndarray
    zero_point: np.ndarray
    bits: int
    granularity: Granularity

    def __post_init__(self):
        check_bits(self.bits)
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64)).copy()
        zp = np.atleast_1d(np.asarray(self.zero_point, dtype=np.int64)).copy()
        if scale.ndim != 1 or scale.shape != zp.shape:
            raise QuantParamError(f"scale {scale.shape} and zero-point {zp.shape} must be equal-length vectors")
        if not (np.isfinite(scale).all() and (scale > 0).all()):
            raise QuantParamError("scales must be finite and strictly positive")
        gran = Granularity(self.granularity)
        if gran is Granularity.LAYER and scale.size != 1:
            raise QuantParamError("layer-wise params carry exactly one (scale, zero-point) pair")
        scale.setflags(write=False)
        zp.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zp)
        object.__setattr__(self, "granularity", gran)

    @property
    def qmax(self) -> int:
        return (1 << self.bits) - 1

    def __len__(self) -> int:
        return self.scale.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantParams):
            return NotImplemented
        return (
            self.bits == other.bits
            and self.granularity is other.granularity
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.zero_point, other.zero_point)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class QuantizedActivation:
    codes: np.ndarray  # uint8, (N, C, H, W)
    params: QuantParams

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 4:
            raise QuantShapeError(f"codes must be 4-D, got shape {codes.shape}")
        if codes.dtype != np.uint8:
            raise QuantShapeError(f"codes must be uint8, got {codes.dtype}")
        if codes.size and int(codes.max()) > self.params.qmax:
            raise QuantParamError(f"code {int(codes.max())} exceeds {self.params.bits}-bit range")
        if self.params.granularity is Granularity.CHANNEL and len(self.params) != codes.shape[1]:
            raise QuantShapeError(f"{len(self.params)} channel params for {codes.shape[1]} channels")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def _from_kernel(cls, codes: np.ndarray, params: QuantParams) -> "QuantizedActivation":
        # the quantize kernel clips into [0, qmax], so the range scan is skipped
        codes.setflags(write=False)
        obj = object.__new__(cls)
        object.__setattr__(obj, "codes", codes)
        object.__setattr__(obj, "params", params)
        return obj

    @property
    def shape(self) -> Shape:
        return tuple(self.codes.shape)  # type: ignore[return-value]


def _range_to_params(lo: np.ndarray, hi: np.ndarray, bits: int) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    qmax = (1 << bits) - 1
    degenerate = (hi - lo) <= DEGENERATE_RANGE
    scale = np.where(degenerate, 1.0, (hi - lo) / qmax)
    zero_point = np.rint(-lo / scale).astype(np.int64)
    return scale, zero_point


def params_layerwise(a: ActivationTensor, bits: int) -> QuantParams:
    bits = check_bits(bits)
    scale, zp = _range_to_params(a.values.min(), a.values.max(), bits)
    return QuantParams(scale, zp, bits, Granularity.LAYER)


def params_channelwise(v: DecomposedView, bits: int) -> QuantParams:
    """One vectorized min/max pass over the decomposed view, one for the params."""
    bits = check_bits(bits)
    lo, hi = channel_min_max(v)
    scale, zp = _range_to_params(lo, hi, bits)
    return QuantParams(scale, zp, bits, Granularity.CHANNEL)


def params_channelwise_loop(a: ActivationTensor, bits: int) -> QuantParams:
    """Channel params computed one channel at a time.

    This is the sequential baseline timed by the benchmark, not a test oracle.
    """
    bits = check_bits(bits)
    c = a.channels
    scale = np.empty(c, dtype=np.float64)
    zp = np.empty(c, dtype=np.int64)
    for ch in range(c):
        sl = a.values[:, ch]
        s, z = _range_to_params(sl.min(), sl.max(), bits)
        scale[ch] = s
        zp[ch] = z
    return QuantParams(scale, zp, bits, Granularity.CHANNEL)


def compute_params(a: ActivationTensor, bits: int, granularity) -> QuantParams:
    if Granularity(granularity) is Granularity.LAYER:
        return params_layerwise(a, bits)
    return params_channelwise(decompose(a), bits)


def _channel_vectors(p: QuantParams, channels: int) -> Tuple[np.ndarray, np.ndarray]:
    if p.granularity is Granularity.LAYER:
        return np.full(channels, p.scale[0]), np.full(channels, float(p.zero_point[0]))
    if len(p) != channels:
        raise QuantShapeError(f"{len(p)} channel params for a tensor with {channels} channels")
    return p.scale, p.zero_point.astype(np.float64)


def quantize(a: ActivationTensor, p: QuantParams) -> QuantizedActivation:
    """codes = clip(rint(x / s_c + z_c), 0, 2**b - 1), division in float64."""
    n, c, h, w = a.shape
    s, z = _channel_vectors(p, c)
    codes = np.empty(a.shape, dtype=np.uint8)
    quantize_codes(a.values.reshape(n, c, h * w), s, z, float(p.qmax), codes.reshape(n, c, h * w))
    return QuantizedActivation._from_kernel(codes, p)


def channel_params_f32(p: QuantParams, channels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel float32 (scale, zero-point) vectors; layer params are repeated."""
    if p.granularity is Granularity.LAYER:
        return (np.full(channels, p.scale[0], dtype=np.float32),
                np.full(channels, p.zero_point[0], dtype=np.float32))
    if len(p) != channels:
        raise QuantShapeError(f"{len(p)} channel params for {channels} channels")
    return p.scale.astype(np.float32), p.zero_point.astype(np.float32)


# Dequantization is float32 throughout: (code - z) is exact while
# |z| < 2**24 - 255, then one rounding for the product with the scale.
# dequantize_prescale and prescale_decomposed apply the same elementwise ops
# and therefore agree bit for bit.

def dequantize_prescale(q: QuantizedActivation) -> ActivationTensor:
    """Scale-applied reconstruction ``s_c * (code - z_c)`` in the (N, C, H, W) layout."""
    c = q.shape[1]
    s, z = channel_params_f32(q.params, c)
    out = q.codes.astype(np.float32)
    out -= z.reshape(1, c, 1, 1)
    out *= s.reshape(1, c, 1, 1)
    return ActivationTensor.adopt(out)


def prescale_decomposed(q: QuantizedActivation) -> np.ndarray:
    """The pre-scaled activations as a (C, N*H*W) float32 matrix."""
    n, c, h, w = q.shape
    s, z = channel_params_f32(q.params, c)
    pre = np.empty((c, n * h * w), dtype=np.float32)
    prescale_channel_major(q.codes.reshape(n, c, h * w), s, z, pre)
    return pre


def fake_quantize_ste_forward(a: ActivationTensor, bits: int, granularity=Granularity.CHANNEL) -> ActivationTensor:
    """Quantize-dequantize with ranges taken from ``a`` itself."""
    return dequantize_prescale(quantize(a, compute_params(a, bits, granularity)))


def fake_quantize_ste_backward(upstream_grad: ActivationTensor, input_shape: Shape | None = None) -> ActivationTensor:
    # Ranges are recomputed from every forward input, so nothing is ever
    # out of range and the estimator passes gradients through untouched.
    if input_shape is not None and tuple(input_shape) != upstream_grad.shape:
        raise QuantShapeError(f"gradient shape {upstream_grad.shape} does not match forward input {tuple(input_shape)}")
    return upstream_grad
