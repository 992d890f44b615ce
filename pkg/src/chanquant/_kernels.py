"""Fused single-pass loops behind the vectorized quantization path.

Kernels walk the (N, C, H*W) layout directly, so the activations are never
copied into channel-major order. Arithmetic matches the numpy
expressions documented next to each kernel operation for operation.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def quantize_codes(x, scale, zero_point, qmax, out):
    # clip(rint(float64(x) / scale[c] + zero_point[c]), 0, qmax) -> uint8
    n, c, hw = x.shape
    for i in range(n):
        for ch in range(c):
            s = scale[ch]
            z = zero_point[ch]
            for k in range(hw):
                v = np.rint(np.float64(x[i, ch, k]) / s + z)
                if v < 0.0:
                    v = 0.0
                elif v > qmax:
                    v = qmax
                out[i, ch, k] = np.uint8(v)


@numba.njit(cache=True, nogil=True)
def prescale_channel_major(codes, scale, zero_point, out):
    # out[c, i*HW + k] = (float32(code) - z32[c]) * s32[c]
    n, c, hw = codes.shape
    for ch in range(c):
        s = scale[ch]
        z = zero_point[ch]
        for i in range(n):
            base = i * hw
            for k in range(hw):
                out[ch, base + k] = (np.float32(codes[i, ch, k]) - z) * s
