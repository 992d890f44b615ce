"""Weighted channel accumulation over quantized activations.

Weights are a dense (M, C) float32 matrix applied to the channel-major
(C, N*H*W) activation layout, i.e. a 1x1-conv / fully-connected surrogate.
Outputs are (M, N*H*W) float32.

Three paths are provided:

* ``accumulate_inloop``: the channel scale multiplies each term inside the
  per-output channel loop, as in the conventional channel-wise kernel.
* ``accumulate_prescaled``: codes are dequantized and scaled once, then a
  dense scale-free matmul does the accumulation.
* ``accumulate_layerwise``: one (s, z) pair hoisted out of everything.
"""

from __future__ import annotations

import numpy as np

from .quantizer import (
    Granularity,
    QuantizedActivation,
    QuantShapeError,
    channel_params_f32,
    prescale_decomposed,
)
from .tensor import to_decomposed


def check_weights(w, channels: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    if w.ndim == 1:
        w = w.reshape(1, -1)
    if w.ndim != 2 or w.shape[0] < 1:
        raise QuantShapeError(f"weights must be an (M, C) matrix with M >= 1, got shape {w.shape}")
    if w.shape[1] != channels:
        raise QuantShapeError(f"weights have {w.shape[1]} columns for {channels} activation channels")
    if not np.isfinite(w).all():
        raise QuantShapeError("weights contain NaN or Inf")
    return w


def accumulate_inloop(q: QuantizedActivation, w) -> np.ndarray:
    """y[m] = sum_c w[m, c] * s_c * (codes[c] - z_c), scaled at every step.

    The loop nest is output unit, then channel. Every step re-derives the
    channel's scaled activations ``s_c * (codes[c] - z_c)`` before weighting
    and adding them, so scaling is repeated for each (m, c) pair and is never
    folded into the weights or hoisted out of the channel loop. Only the
    position axis is vectorized.
    """
    codes = to_decomposed(q.codes)
    c_count, positions = codes.shape
    w = check_weights(w, c_count)
    scale, zp = channel_params_f32(q.params, c_count)
    m_count = w.shape[0]
    y = np.zeros((m_count, positions), dtype=np.float32)
    scaled = np.empty(positions, dtype=np.float32)
    for m in range(m_count):
        acc = y[m]
        for c in range(c_count):
            np.subtract(codes[c], zp[c], out=scaled, dtype=np.float32)
            scaled *= scale[c]
            scaled *= w[m, c]
            acc += scaled
    return y


def accumulate_prescaled(q: QuantizedActivation, w) -> np.ndarray:
    """Pre-scale all channels in one pass, then a scale-free dense product."""
    pre = prescale_decomposed(q)
    w = check_weights(w, pre.shape[0])
    return w @ pre


def accumulate_layerwise(q: QuantizedActivation, w) -> np.ndarray:
    p = q.params
    if p.granularity is not Granularity.LAYER:
        raise QuantShapeError("accumulate_layerwise needs layer-wise params; got channel-wise")
    codes = to_decomposed(q.codes)
    w = check_weights(w, codes.shape[0])
    shifted = codes.astype(np.float32) - np.float32(p.zero_point[0])
    return np.float32(p.scale[0]) * (w @ shifted)


def path_deviation(q: QuantizedActivation, w, y, y_ref) -> float:
    """Largest per-element disagreement between two accumulation outputs.

    Each difference is divided by that element's accumulation magnitude
    ``sum_c |w[m, c]| * |pre[c, j]|`` rather than by ``|y_ref|``: outputs that
    cancel to near zero would otherwise report float32 reassociation noise as
    a large relative error. Elements whose every term is zero must agree exactly.
    """
    pre = np.abs(prescale_decomposed(q).astype(np.float64))
    w = np.abs(check_weights(w, pre.shape[0]).astype(np.float64))
    mag = w @ pre
    diff = np.abs(np.asarray(y, dtype=np.float64) - np.asarray(y_ref, dtype=np.float64))
    if diff.shape != mag.shape:
        raise QuantShapeError(f"output shapes {diff.shape} and {mag.shape} differ")
    zero = mag == 0
    if np.any(diff[zero] != 0):
        return float("inf")
    if zero.all():
        return 0.0
    return float(np.max(diff[~zero] / mag[~zero]))
