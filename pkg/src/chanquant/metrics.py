"""Distortion and distribution statistics for quantized activations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .quantizer import (
    Granularity,
    dequantize_prescale,
    params_channelwise,
    params_channelwise_loop,
    params_layerwise,
    quantize,
)
from .tensor import ActivationTensor, decompose


class Strategy(str, enum.Enum):
    LAYERWISE = "layerwise"
    INLOOP = "inloop"
    PRESCALED = "prescaled"

    @property
    def granularity(self) -> Granularity:
        return Granularity.LAYER if self is Strategy.LAYERWISE else Granularity.CHANNEL


class MetricError(ValueError):
    pass


def _pair(x, q) -> Tuple[np.ndarray, np.ndarray]:
    # norms accumulate in float64 so million-element tensors stay stable
    x = np.asarray(x, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if x.size != q.size:
        raise MetricError(f"length mismatch: {x.size} vs {q.size}")
    if x.size == 0:
        raise MetricError("empty input")
    return x, q


def cosine_similarity(x, q) -> float:
    """X.Q / (|X|_2 |Q|_2); 0 when exactly one side is all-zero."""
    x, q = _pair(x, q)
    nx = np.linalg.norm(x)
    nq = np.linalg.norm(q)
    if nx == 0 and nq == 0:
        raise MetricError("cosine similarity of two all-zero vectors is undefined")
    if nx == 0 or nq == 0:
        return 0.0
    cos = float(np.dot(x / nx, q / nq))
    return min(1.0, max(-1.0, cos))


def relative_error(x, q) -> float:
    """|X - Q|_2 / |X|_2 with X the reference."""
    x, q = _pair(x, q)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise MetricError("relative error is undefined for an all-zero reference")
    return float(np.linalg.norm(x - q) / nx)


def skewness(x) -> float:
    """Population skewness m3 / m2**1.5."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise MetricError("skewness needs at least two values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 0:
        raise MetricError("skewness is undefined for zero variance")
    m3 = np.mean(d * d * d)
    return float(m3 / m2**1.5)


def reconstruct(a: ActivationTensor, bits: int, strategy) -> ActivationTensor:
    """Quantize and dequantize ``a`` the way ``strategy`` does it."""
    strategy = Strategy(strategy)
    if strategy is Strategy.LAYERWISE:
        p = params_layerwise(a, bits)
    elif strategy is Strategy.INLOOP:
        p = params_channelwise_loop(a, bits)
    else:
        p = params_channelwise(decompose(a), bits)
    return dequantize_prescale(quantize(a, p))


@dataclass
class DistortionReport:
    strategy: Strategy
    bits: int
    cosine: float
    rel_error: float
    per_layer: List[Tuple[int, float]] = field(default_factory=list)
    per_layer_cosine: List[Tuple[int, float]] = field(default_factory=list)

    def rows(self) -> List[dict]:
        """Flat records: one per layer, then a ``mean`` row."""
        out = [
            {"layer": i, "strategy": self.strategy.value, "bits": self.bits, "cosine": cos, "rel_error": err}
            for (i, err), (_, cos) in zip(self.per_layer, self.per_layer_cosine)
        ]
        out.append(
            {"layer": "mean", "strategy": self.strategy.value, "bits": self.bits,
             "cosine": self.cosine, "rel_error": self.rel_error}
        )
        return out


def profile_layers(layers: Sequence[ActivationTensor], bits: int, strategy) -> DistortionReport:
    """Per-layer reconstruction error and its unweighted mean over layers."""
    if not layers:
        raise MetricError("need at least one layer")
    strategy = Strategy(strategy)
    errs, coss = [], []
    for i, a in enumerate(layers):
        rec = reconstruct(a, bits, strategy)
        errs.append((i, relative_error(a.values, rec.values)))
        coss.append((i, cosine_similarity(a.values, rec.values)))
    return DistortionReport(
        strategy=strategy,
        bits=bits,
        cosine=float(np.mean([c for _, c in coss])),
        rel_error=float(np.mean([e for _, e in errs])),
        per_layer=errs,
        per_layer_cosine=coss,
    )
