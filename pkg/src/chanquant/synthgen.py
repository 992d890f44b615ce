"""Seeded synthetic activations with channel-scale spread and right skew.

Random stream
-------------
All randomness comes from SplitMix64. For seed ``s`` the i-th output
(i = 0, 1, 2, ...) is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` with

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

which is the standard sequential SplitMix64 sequence evaluated by counter.
A 64-bit word maps to a double in [0, 1) as ``(z >> 11) * 2**-53``.

Generation recipe for ``GenSpec(seed, (N, C, H, W), spread, skew, nonneg)``:

1. Draws 0..C-1 give channel scales ``spread ** u_c`` (log-uniform in
   [1, spread]).
2. The next 2*K draws (K = ceil(N*C*H*W / 2)) feed Box-Muller: pair k uses
   ``u1 = 1 - d[2k]``, ``u2 = d[2k+1]`` and yields
   ``r cos(t)``, ``r sin(t)`` with ``r = sqrt(-2 ln u1)``, ``t = 2 pi u2``,
   interleaved into the flat (N, C, H, W) C-order buffer.
3. Skew map ``g(x) = expm1(k x) / k`` for ``k = skew > 0``, identity for
   ``k = 0``. It is monotone and its skewness grows with ``k``.
4. Multiply every value by its channel scale, clip at 0 if ``nonneg``,
   round to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from .tensor import ActivationTensor, Shape

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class GenSpecError(ValueError):
    pass


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of the SplitMix64 stream for ``seed``."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + idx * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, start: int, count: int) -> np.ndarray:
    return (splitmix64(seed, start, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class GenSpec:
    seed: int = 42
    shape: Shape = (1, 16, 32, 32)
    channel_spread: float = 1.0
    skew: float = 0.0
    nonneg: bool = False

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if len(shape) != 4:
            raise GenSpecError(f"shape must be (N, C, H, W), got {self.shape}")
        if min(shape) < 1:
            raise GenSpecError(f"zero-sized shape {shape}")
        if not self.channel_spread >= 1:
            raise GenSpecError(f"channel_spread must be >= 1, got {self.channel_spread}")
        if not self.skew >= 0:
            raise GenSpecError(f"skew must be >= 0, got {self.skew}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise GenSpecError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "seed", int(self.seed))

    def with_batch(self, n: int) -> "GenSpec":
        return replace(self, shape=(n,) + self.shape[1:])


def channel_scales(spec: GenSpec) -> np.ndarray:
    u = uniform01(spec.seed, 0, spec.shape[1])
    return np.float64(spec.channel_spread) ** u


def skew_map(x: np.ndarray, k: float) -> np.ndarray:
    if k == 0:
        return x
    return np.expm1(k * x) / k


def generate(spec: GenSpec) -> ActivationTensor:
    n, c, h, w = spec.shape
    total = n * c * h * w
    pairs = (total + 1) // 2
    d = uniform01(spec.seed, c, 2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-d[0::2]))
    t = 2.0 * np.pi * d[1::2]
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(t)
    z[1::2] = r * np.sin(t)
    x = skew_map(z[:total], spec.skew).reshape(spec.shape)
    x = x * channel_scales(spec).reshape(1, c, 1, 1)
    if spec.nonneg:
        x = np.maximum(x, 0.0)
    return ActivationTensor(x.astype(np.float32))


_WEIGHT_STREAM = 0x5745494748545321  # xor-ed into the seed so weights never reuse activation draws


def make_weights(seed: int, outputs: int, channels: int) -> np.ndarray:
    """(outputs, channels) float32 weights, uniform in [-1, 1) from the seed's weight stream."""
    u = uniform01((seed ^ _WEIGHT_STREAM) & _MASK64, 0, outputs * channels)
    return (2.0 * u - 1.0).reshape(outputs, channels).astype(np.float32)


# CIFAR ResNet-20 activation sites: stem + 3 stages x 3 blocks x 2 convs.
RESNET20_STAGES: Tuple[Tuple[int, int, int], ...] = ((16, 32, 7), (32, 16, 6), (64, 8, 6))
RESNET20_BATCH = 16


def resnet20_shape_preset(
    seed: int = 42,
    batch: int = RESNET20_BATCH,
    channel_spread: float = 16.0,
    skew: float = 1.0,
    nonneg: bool = True,
) -> List[GenSpec]:
    """One GenSpec per quantized activation site; layer i is seeded ``seed + i``."""
    specs = []
    for channels, spatial, count in RESNET20_STAGES:
        for _ in range(count):
            specs.append(
                GenSpec(
                    seed=(seed + len(specs)) & _MASK64,
                    shape=(batch, channels, spatial, spatial),
                    channel_spread=channel_spread,
                    skew=skew,
                    nonneg=nonneg,
                )
            )
    return specs
