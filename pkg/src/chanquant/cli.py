"""``chanquant`` command line: gen, quantize, distort, equiv, bench.

Exit codes: 0 success, 1 equivalence/assertion failure, 2 usage or I/O error.
CSV reports open with a ``#`` provenance line (tool version and the fully
resolved config); JSON reports are a flat array of row objects and the
provenance line goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .bench import (
    BenchError,
    DEFAULT_ITERS,
    DEFAULT_WARMUP,
    bench_sweep,
    equivalence_check,
    records_to_csv,
)
from .metrics import Strategy, cosine_similarity, profile_layers, reconstruct, relative_error
from .quantizer import QuantParams, check_bits, compute_params
from .synthgen import GenSpec, generate, resnet20_shape_preset
from .tensor import ActivationTensor, dumps_pqt, load_pqt

log = logging.getLogger("chanquant")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

PRESETS = ("resnet20",)


class UsageError(Exception):
    pass


def _parse_shape(text: str):
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be N,C,H,W integers, got {text!r}")
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"shape must be four positive integers N,C,H,W, got {text!r}")
    return dims


def _parse_int_list(text: str) -> List[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _bits(text: str) -> int:
    try:
        return check_bits(int(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanquant",
        description="Layer-wise vs channel-wise activation quantization: tensors, distortion, equivalence, latency.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, strategy=True, fmt=True):
        p.add_argument("--seed", type=_seed, default=42, help="seed for every random draw")
        p.add_argument("--bits", type=_bits, default=3, help="activation bit-width, 2..8")
        if strategy:
            p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.PRESCALED.value)
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")
            p.add_argument("-o", "--output", default=None, help="report path (default: stdout)")

    def source(p):
        p.add_argument("--shape", type=_parse_shape, default=None, help="N,C,H,W")
        p.add_argument("--preset", choices=PRESETS, default=None, help="ResNet-20 activation stack, batch 16")
        p.add_argument("--spread", type=float, default=None,
                       help="channel scale spread (default 1 for --shape, 16 for --preset)")
        p.add_argument("--skew", type=float, default=None,
                       help="right-skew knob (default 0 for --shape, 1 for --preset)")
        p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=None,
                       help="clip at 0 (default off for --shape, on for --preset)")

    p = sub.add_parser("gen", help="write a synthetic PQT1 tensor", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--seed", type=_seed, default=42, help="seed for every random draw")
    source(p)
    p.add_argument("--layer", type=int, default=0, help="preset layer index")
    p.add_argument("-o", "--output", required=True, help="PQT1 output path")

    p = sub.add_parser("quantize", help="fake-quantize a PQT1 tensor", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("input", help="PQT1 input")
    common(p)
    p.add_argument("--tensor-out", default=None, help="write the dequantized tensor here (PQT1)")

    p = sub.add_parser("distort", help="cosine similarity / relative error per layer",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("inputs", nargs="*", help="PQT1 layer files")
    common(p)
    source(p)

    p = sub.add_parser("equiv", help="randomized in-loop vs pre-scaled accumulation check",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--seed", type=_seed, default=42, help="seed for every random draw")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--output", default=None, help="report path (default: stdout)")

    p = sub.add_parser("bench", help="latency sweep over the ResNet-20 preset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p, strategy=False)
    p.add_argument("--batches", type=_parse_int_list, default=[16], help="comma-separated batch sizes")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    return parser


# -- helpers -----------------------------------------------------------------

def _resolved_specs(args) -> List[GenSpec]:
    if args.shape is not None and args.preset is not None:
        raise UsageError("give either --shape or --preset, not both")
    if args.shape is None and args.preset is None:
        raise UsageError("one of --shape or --preset is required")
    if args.preset is not None:
        kw = {}
        if args.spread is not None:
            kw["channel_spread"] = args.spread
        if args.skew is not None:
            kw["skew"] = args.skew
        if args.nonneg is not None:
            kw["nonneg"] = args.nonneg
        return resnet20_shape_preset(seed=args.seed, **kw)
    return [GenSpec(
        seed=args.seed,
        shape=args.shape,
        channel_spread=1.0 if args.spread is None else args.spread,
        skew=0.0 if args.skew is None else args.skew,
        nonneg=bool(args.nonneg),
    )]


def _config(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k == "verbose":
            continue
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


def _provenance(args) -> str:
    return f"# chanquant {__version__} config={json.dumps(_config(args), sort_keys=True)}"


def render(rows: Sequence[dict], fmt: str, args) -> str:
    if fmt == "json":
        return json.dumps(list(rows), indent=1) + "\n"
    buf = io.StringIO()
    buf.write(_provenance(args) + "\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, args) -> None:
    if args.format == "json":
        print(_provenance(args), file=sys.stderr)
    if args.output is None:
        sys.stdout.write(text)
    else:
        _write(Path(args.output), text.encode("utf-8"))


def _write(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _load(path: str) -> ActivationTensor:
    try:
        return load_pqt(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    specs = _resolved_specs(args)
    if not 0 <= args.layer < len(specs):
        raise UsageError(f"--layer must be in [0, {len(specs) - 1}]")
    spec = specs[args.layer] if args.preset else specs[0]
    _write(Path(args.output), dumps_pqt(generate(spec)))
    log.info("wrote %s shape=%s", args.output, spec.shape)
    return EXIT_OK


def _param_rows(p: QuantParams) -> List[dict]:
    return [{"channel": i, "granularity": p.granularity.value, "bits": p.bits,
             "scale": float(s), "zero_point": int(z)}
            for i, (s, z) in enumerate(zip(p.scale, p.zero_point))]


def cmd_quantize(args) -> int:
    a = _load(args.input)
    strategy = Strategy(args.strategy)
    params = compute_params(a, args.bits, strategy.granularity)
    rec = reconstruct(a, args.bits, strategy)
    if args.tensor_out:
        _write(Path(args.tensor_out), dumps_pqt(rec))
    _emit(render(_param_rows(params), args.format, args), args)
    return EXIT_OK


def cmd_distort(args) -> int:
    if args.inputs:
        if args.shape is not None or args.preset is not None:
            raise UsageError("give PQT1 inputs or --shape/--preset, not both")
        layers = [_load(p) for p in args.inputs]
    else:
        layers = [generate(s) for s in _resolved_specs(args)]
    report = profile_layers(layers, args.bits, args.strategy)
    _emit(render(report.rows(), args.format, args), args)
    return EXIT_OK


def cmd_equiv(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    report = equivalence_check(args.trials, seed=args.seed, tol=args.tol)
    _emit(render([report.row()], args.format, args), args)
    if not report.passed:
        print(f"equivalence failed: max deviation {report.max_deviation:.3e} > {report.tolerance:.0e}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 10:
        raise UsageError("--iters must be >= 10")
    if args.warmup < 0:
        raise UsageError("--warmup must be >= 0")
    records = bench_sweep(args.batches, args.bits, warmup=args.warmup, iters=args.iters, seed=args.seed)
    if args.format == "csv":
        text = _provenance(args) + "\n" + records_to_csv(records)
    else:
        text = render([r.row() for r in records], "json", args)
    _emit(text, args)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "quantize": cmd_quantize,
    "distort": cmd_distort,
    "equiv": cmd_equiv,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"chanquant {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BenchError as exc:
        print(f"chanquant {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"chanquant {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
