"""Latency harness for the three quantization strategies.

One timed iteration runs the whole data-conversion pipeline of a strategy
over every layer of a stack, followed by one accumulation pass per layer so
the cost of scaling inside the accumulation loop is visible:

* layerwise: tensor min/max params, quantize, hoisted-scale accumulation
* inloop:    channel params one channel at a time, quantize, in-loop scaling
* prescaled: vectorized channel params, quantize, pre-scale, dense matmul

Inputs and weights are generated before timing starts. Times come from
``time.perf_counter_ns``.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .accumulate import accumulate_inloop, accumulate_layerwise, accumulate_prescaled, path_deviation
from .metrics import Strategy
from .quantizer import params_channelwise, params_channelwise_loop, params_layerwise, quantize
from .synthgen import GenSpec, generate, make_weights, resnet20_shape_preset, uniform01
from .tensor import ActivationTensor, decompose

log = logging.getLogger(__name__)

DEFAULT_WARMUP = 5
DEFAULT_ITERS = 50
MIN_ITERS = 10
EQUIV_TOL = 1e-5

CSV_COLUMNS = ("strategy", "n", "c", "h", "w", "bits", "warmup", "iters",
               "median_ns", "mean_ns", "p10_ns", "p90_ns")


class BenchError(RuntimeError):
    pass


@dataclass
class BenchRecord:
    strategy: Strategy
    n: int
    c: int
    h: int
    w: int
    bits: int
    warmup: int
    iters: int
    median_ns: int
    mean_ns: int
    p10_ns: int
    p90_ns: int
    # not part of the CSV schema; True when the kernel may run BLAS-threaded
    parallel: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.iters < MIN_ITERS:
            raise BenchError(f"iters must be >= {MIN_ITERS}, got {self.iters}")
        if not self.p10_ns <= self.median_ns <= self.p90_ns:
            raise BenchError("percentiles out of order")

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return (self.n, self.c, self.h, self.w)

    def row(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return {k: d[k] for k in CSV_COLUMNS}


def _pipeline(strategy: Strategy, bits: int) -> Callable[[ActivationTensor, np.ndarray], np.ndarray]:
    if strategy is Strategy.LAYERWISE:
        def run(a, w):
            return accumulate_layerwise(quantize(a, params_layerwise(a, bits)), w)
    elif strategy is Strategy.INLOOP:
        def run(a, w):
            return accumulate_inloop(quantize(a, params_channelwise_loop(a, bits)), w)
    else:
        def run(a, w):
            return accumulate_prescaled(quantize(a, params_channelwise(decompose(a), bits)), w)
    return run


def prepare_inputs(specs: Sequence[GenSpec]) -> List[Tuple[ActivationTensor, np.ndarray]]:
    """Activations plus square (C, C) weights for each layer spec."""
    return [(generate(s), make_weights(s.seed, s.shape[1], s.shape[1])) for s in specs]


def _measure(inputs, bits: int, strategy: Strategy, warmup: int, iters: int):
    if iters < MIN_ITERS:
        raise BenchError(f"iters must be >= {MIN_ITERS}, got {iters}")
    if warmup < 0:
        raise BenchError(f"warmup must be >= 0, got {warmup}")
    run = _pipeline(strategy, bits)
    for _ in range(warmup):
        for a, w in inputs:
            run(a, w)
    samples = np.empty(iters, dtype=np.int64)
    outputs = None
    for i in range(iters):
        t0 = time.perf_counter_ns()
        outputs = [run(a, w) for a, w in inputs]
        samples[i] = time.perf_counter_ns() - t0
    n, c, h, w_ = inputs[0][0].shape
    rec = BenchRecord(
        strategy=strategy, n=n, c=c, h=h, w=w_, bits=bits, warmup=warmup, iters=iters,
        median_ns=int(round(np.median(samples))),
        mean_ns=int(round(samples.mean())),
        p10_ns=int(round(np.percentile(samples, 10))),
        p90_ns=int(round(np.percentile(samples, 90))),
        parallel=strategy is not Strategy.INLOOP,
    )
    return rec, outputs


def bench_quantization(
    spec: Union[GenSpec, Sequence[GenSpec]],
    bits: int,
    strategy,
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
) -> BenchRecord:
    """Time one strategy over a layer spec or a stack of them.

    The record's shape is that of the first layer in the stack.
    """
    specs = [spec] if isinstance(spec, GenSpec) else list(spec)
    rec, _ = _measure(prepare_inputs(specs), bits, Strategy(strategy), warmup, iters)
    return rec


def check_equivalence(inputs, bits: int, prescaled_out, inloop_out, tol: float = EQUIV_TOL) -> float:
    worst = 0.0
    for (a, w), y_pre, y_loop in zip(inputs, prescaled_out, inloop_out):
        q = quantize(a, params_channelwise(decompose(a), bits))
        worst = max(worst, path_deviation(q, w, y_pre, y_loop))
    if not worst <= tol:
        raise BenchError(f"prescaled and in-loop outputs disagree: deviation {worst:.3e} > {tol:.0e}")
    return worst


def bench_sweep(
    batches: Iterable[int],
    bits: int,
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
    seed: int = 42,
    strategies: Sequence[Strategy] = tuple(Strategy),
) -> List[BenchRecord]:
    """Every (strategy, batch) pair over the ResNet-20 preset, ordered by strategy then batch.

    All strategies for a batch see the same generated inputs, and the
    prescaled outputs from the timed runs are checked against the in-loop
    outputs.
    """
    batches = [int(b) for b in batches]
    if not batches:
        raise BenchError("need at least one batch size")
    strategies = [Strategy(s) for s in strategies]
    by_batch = {}
    for b in batches:
        inputs = prepare_inputs(resnet20_shape_preset(seed=seed, batch=b))
        outs = {}
        for s in strategies:
            rec, outs[s] = _measure(inputs, bits, s, warmup, iters)
            by_batch[(s, b)] = rec
            log.info("%s batch=%d median=%.3f ms", s.value, b, rec.median_ns / 1e6)
        if Strategy.PRESCALED in outs and Strategy.INLOOP in outs:
            check_equivalence(inputs, bits, outs[Strategy.PRESCALED], outs[Strategy.INLOOP])
    return [by_batch[(s, b)] for s in strategies for b in batches]


def records_to_csv(records: Iterable[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def records_from_csv(text: str) -> List[BenchRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise BenchError(f"unexpected CSV header {reader.fieldnames}")
    ints = [f.name for f in fields(BenchRecord) if f.name in CSV_COLUMNS and f.name != "strategy"]
    out = []
    for row in reader:
        kw = {k: int(row[k]) for k in ints}
        s = Strategy(row["strategy"])
        out.append(BenchRecord(strategy=s, parallel=s is not Strategy.INLOOP, **kw))
    return out


@dataclass
class EquivalenceReport:
    trials: int
    max_deviation: float
    tolerance: float
    seed: int

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    def row(self) -> dict:
        return {"trials": self.trials, "max_deviation": self.max_deviation,
                "tolerance": self.tolerance, "seed": self.seed, "passed": self.passed}


def random_instance(seed: int, trial: int):
    """Deterministic (activation, weights, bits) for one equivalence trial.

    C in [1, 64], N*H*W in [1, 4096], bits in [2, 8], M in [1, 8].
    """
    sub = (seed * 1_000_003 + trial) & ((1 << 64) - 1)
    u = uniform01(sub, 0, 8)
    c = 1 + int(u[0] * 64)
    n = 1 + int(u[1] * 4)
    w_ = 1 + int(u[2] * (4096 // n))
    bits = 2 + int(u[3] * 7)
    m = 1 + int(u[4] * 8)
    spec = GenSpec(seed=sub, shape=(n, c, 1, w_), channel_spread=1.0 + 15.0 * u[5],
                   skew=float(u[6]), nonneg=bool(u[7] < 0.5))
    return generate(spec), make_weights(sub, m, c), bits


def equivalence_check(trials: int, seed: int = 42, tol: float = EQUIV_TOL) -> EquivalenceReport:
    if trials < 1:
        raise BenchError(f"trials must be >= 1, got {trials}")
    worst = 0.0
    for t in range(trials):
        a, w, bits = random_instance(seed, t)
        q = quantize(a, params_channelwise(decompose(a), bits))
        worst = max(worst, path_deviation(q, w, accumulate_prescaled(q, w), accumulate_inloop(q, w)))
    return EquivalenceReport(trials=trials, max_deviation=worst, tolerance=tol, seed=seed)
