"""Batch command-line front end.

Subcommands: analyze (sigma statistics and pair classification), quantize
(float tensor -> .ovp container), dequantize (container -> float tensor),
matmul (packed multiply through the integer pipeline), tables (code/value
dumps), selftest (format table verification).

Conventions: JSON summaries go to stdout, data goes to files, diagnostics
go to stderr.  Output files are written atomically (temp + rename).  Float
tensors live as a raw little-endian f32 stream at PATH with a sidecar
header at PATH.ovt.  Exit codes: 0 success, 2 usage, 3 input format,
4 numerical check failure, 5 I/O.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np

from .codec import (
    CodecError,
    OvpContainer,
    QuantConfig,
    decode_tensor,
    encode_tensor,
    read_container,
    read_ovt,
    write_container,
    write_ovt,
)
from .compute import AccOverflow, ShapeMismatch, matmul_packed, matmul_reference
from .formats import (
    AbfloatConfig,
    FormatError,
    NormalDType,
    code_table,
    decode_abfloat,
    decode_normal,
    encode_abfloat,
    encode_normal,
)
from .quantizer import (
    EmptyTensor,
    classify_pairs,
    compute_stats,
    search_scale,
    search_scale_clipped,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CHECK = 4
EXIT_IO = 5

_DTYPES = {"int4": NormalDType.INT4, "flint4": NormalDType.FLINT4, "int8": NormalDType.INT8}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AccOverflow as exc:
        _log(f"error: {exc}")
        return EXIT_CHECK
    except (CodecError, FormatError, EmptyTensor, ShapeMismatch) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2))


# ---------------------------------------------------------------------------
# File plumbing
# ---------------------------------------------------------------------------

def _atomic_write(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ovpq-tmp-")
    try:
        os.fchmod(fd, 0o644)  # mkstemp defaults to 0600
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _sidecar(path: str) -> str:
    return path + ".ovt"


def _read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    with open(_sidecar(path), "rb") as f:
        header = f.read()
    return read_ovt(data, header)


def _write_tensor(path: str, arr: np.ndarray) -> None:
    data, header = write_ovt(arr)
    _atomic_write(path, data)
    _atomic_write(_sidecar(path), header)


def _read_container_file(path: str) -> OvpContainer:
    with open(path, "rb") as f:
        return read_container(f.read())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_analyze(args: argparse.Namespace) -> int:
    tensor = _read_tensor(args.tensor)
    stats = compute_stats(tensor)
    threshold = None
    pair_stats = None
    if stats.sigma > 0:
        threshold = args.threshold_sigma * stats.sigma
        pair_stats = dataclasses.asdict(classify_pairs(tensor, threshold))
    _emit(
        {
            "command": "analyze",
            "input": args.tensor,
            "shape": list(tensor.shape),
            "elements": int(tensor.size),
            "threshold_sigma": args.threshold_sigma,
            "threshold": threshold,
            "tensor_stats": dataclasses.asdict(stats),
            "pair_stats": pair_stats,
        }
    )
    return EXIT_OK


def _cmd_quantize(args: argparse.Namespace) -> int:
    if args.scale is not None and args.scale <= 0:
        _log("error: --scale must be positive")
        return EXIT_USAGE
    if args.steps < 1:
        _log("error: --steps must be at least 1")
        return EXIT_USAGE
    if not 0 < args.window_lo <= args.window_hi:
        _log("error: window must satisfy 0 < --window-lo <= --window-hi")
        return EXIT_USAGE
    dtype = _DTYPES[args.dtype]
    bias = dtype.default_bias if args.bias is None else args.bias
    abf = AbfloatConfig(dtype.bits, bias, clip=not args.unsafe_no_clip)

    tensor = _read_tensor(args.tensor).astype(np.float64)
    search_info = None
    if args.scale is not None:
        scale = args.scale
    elif tensor.size == 0:
        scale = 1.0
    else:
        result = search_scale(
            tensor,
            dtype,
            abf,
            window_lo=args.window_lo,
            window_hi=args.window_hi,
            steps=args.steps,
        )
        scale = result.scale
        search_info = dataclasses.asdict(result) | {
            "window_lo": args.window_lo,
            "window_hi": args.window_hi,
            "steps": args.steps,
        }

    cfg = QuantConfig(dtype=dtype, abf=abf, scale=scale)
    container = encode_tensor(tensor, cfg)
    _atomic_write(args.output, write_container(container))

    # report the MSE of what actually landed on disk
    written = _read_container_file(args.output)
    restored = decode_tensor(written)
    mse = float(np.mean((tensor - restored) ** 2)) if tensor.size else 0.0

    pair_stats = None
    baseline = None
    if tensor.size:
        pair_stats = dataclasses.asdict(classify_pairs(tensor, scale * cfg.threshold))
        base = search_scale_clipped(
            tensor,
            dtype,
            window_lo=args.window_lo,
            window_hi=args.window_hi,
            steps=args.steps,
        )
        baseline = {"scale": base.scale, "mse": base.mse}

    _emit(
        {
            "command": "quantize",
            "input": args.tensor,
            "output": args.output,
            "dtype": args.dtype,
            "bias": bias,
            "shape": list(container.shape),
            "elements": int(container.element_count),
            "scale": scale,
            "mse": mse,
            "search": search_info,
            "pair_stats": pair_stats,
            "baseline_int_clipped": baseline,
            "payload_bytes": len(container.payload),
        }
    )
    return EXIT_OK


def _cmd_dequantize(args: argparse.Namespace) -> int:
    container = _read_container_file(args.container)
    tensor = decode_tensor(container)
    _write_tensor(args.output, tensor)
    _emit(
        {
            "command": "dequantize",
            "input": args.container,
            "output": args.output,
            "dtype": container.dtype.name.lower(),
            "shape": list(container.shape),
            "elements": int(container.element_count),
            "scale": container.scale,
        }
    )
    return EXIT_OK


def _cmd_matmul(args: argparse.Namespace) -> int:
    a = _read_container_file(args.a)
    b_t = _read_container_file(args.b_t)
    result = matmul_packed(a, b_t)
    check = None
    if args.check:
        reference = matmul_reference(a, b_t)
        if not np.array_equal(result, reference):
            bad = int(np.flatnonzero(result != reference)[0])
            _log(
                "error: integer pipeline disagrees with the float reference "
                f"at flat index {bad}"
            )
            return EXIT_CHECK
        check = "pass"
    _write_tensor(args.output, result)
    _emit(
        {
            "command": "matmul",
            "a": args.a,
            "b_t": args.b_t,
            "output": args.output,
            "shape": list(result.shape),
            "check": check,
        }
    )
    return EXIT_OK


def _cmd_tables(args: argparse.Namespace) -> int:
    if args.dtype is not None:
        fmt = _DTYPES[args.dtype]
        name = args.dtype
        bias = None
    else:
        width = 4 if args.abfloat == "e2m1" else 8
        bias = 0 if args.bias is None else args.bias
        fmt = AbfloatConfig(width, bias)
        name = args.abfloat
    rows = code_table(fmt)
    if args.json:
        _emit({"command": "tables", "format": name, "bias": bias, "entries": rows})
        return EXIT_OK
    title = name if bias is None else f"{name} bias={bias}"
    print(f"# {title}")
    print(f"{'code':>4}  {'bits':>8}  {'exponent':>8}  {'integer':>7}  {'value':>10}  role")
    for row in rows:
        exp = "-" if row["exponent"] is None else row["exponent"]
        integer = "-" if row["integer"] is None else row["integer"]
        value = "-" if row["value"] is None else row["value"]
        print(
            f"{row['code']:>4}  {row['bits']:>8}  {exp:>8}  {integer:>7}  "
            f"{value:>10}  {row['role']}"
        )
    return EXIT_OK


def _cmd_selftest(args: argparse.Namespace) -> int:
    checks = []

    def check(name: str, passed: bool, detail: str = "") -> None:
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    e2m1_bias0 = AbfloatConfig(4, 0)
    table = [decode_abfloat(c, e2m1_bias0, strict=False).value for c in range(8)]
    check("e2m1-bias0-table", table == [0, 3, 4, 6, 8, 12, 16, 24], f"{table}")

    pair = decode_abfloat(0b0101, AbfloatConfig(4, 2))
    check("e2m1-bias2-decode-48", pair.value == 48, f"{pair}")

    for dtype in NormalDType:
        ok = all(
            encode_normal(decode_normal(c, dtype).value, dtype) == c
            for c in range(1 << dtype.bits)
            if c != dtype.identifier
        )
        check(f"round-trip-{dtype.name.lower()}", ok)

    for cfg in [AbfloatConfig(4, b) for b in range(5)] + [
        AbfloatConfig(8, 0),
        AbfloatConfig(8, 4),
    ]:
        ok = all(
            encode_abfloat(decode_abfloat(c, cfg).value, cfg) == c
            for c in range(1 << cfg.width)
            if cfg.is_emittable(c)
        )
        check(f"round-trip-abfloat-w{cfg.width}-b{cfg.bias}", ok)

    for dtype in NormalDType:
        top = dtype.max_magnitude
        sweep = np.linspace(-2 * top, 2 * top, 4001)
        ok = all(encode_normal(float(v), dtype) != dtype.identifier for v in sweep)
        check(f"identifier-exclusion-{dtype.name.lower()}", ok)
    cfg = AbfloatConfig(4, 2)
    sweep = np.linspace(-200, 200, 4001)
    ok = all(
        not cfg.is_disabled(encode_abfloat(float(v), cfg)) for v in sweep if v != 0
    )
    check("disabled-exclusion-e2m1", ok)

    sizes_ok = True
    for dtype in NormalDType:
        for n in range(0, 66):
            cfg = QuantConfig(dtype=dtype, scale=1.0)
            c = encode_tensor(np.zeros(n), cfg)
            expect = n if dtype is NormalDType.INT8 else (n + 1) // 2
            sizes_ok &= len(c.payload) == expect
    check("alignment-sizes", sizes_ok)

    passed = all(c["passed"] for c in checks)
    _emit({"command": "selftest", "passed": passed, "checks": checks})
    return EXIT_OK if passed else EXIT_CHECK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovpq",
        description="Outlier-victim pair quantization tool",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="sigma statistics and pair classification")
    p.add_argument("tensor", help="f32 tensor path (sidecar header at PATH.ovt)")
    p.add_argument(
        "--threshold-sigma",
        type=float,
        default=3.0,
        metavar="K",
        help="outlier threshold in sigmas (default 3)",
    )
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("quantize", help="encode a float tensor to a .ovp container")
    p.add_argument("tensor", help="f32 tensor path (sidecar header at PATH.ovt)")
    p.add_argument("output", help="output .ovp path")
    p.add_argument("--dtype", choices=sorted(_DTYPES), default="int4")
    p.add_argument(
        "--bias",
        type=int,
        default=None,
        metavar="B",
        help="abfloat exponent bias (default: complementary bias for the dtype)",
    )
    group = p.add_mutually_exclusive_group()
    group.add_argument("--scale", type=float, default=None, help="fixed scale factor")
    group.add_argument(
        "--search",
        action="store_true",
        help="search the minimum-MSE scale (the default behaviour)",
    )
    p.add_argument("--window-lo", type=float, default=0.25, metavar="F")
    p.add_argument("--window-hi", type=float, default=4.0, metavar="F")
    p.add_argument("--steps", type=int, default=64, metavar="N")
    p.add_argument("--unsafe-no-clip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("dequantize", help="decode a .ovp container to a float tensor")
    p.add_argument("container", help="input .ovp path")
    p.add_argument("output", help="output f32 tensor path")
    p.set_defaults(func=_cmd_dequantize)

    p = sub.add_parser(
        "matmul",
        help="packed matrix multiply (second operand holds the transposed "
        "right matrix, packed along the reduction axis)",
    )
    p.add_argument("a", help="left matrix container [m, k]")
    p.add_argument("b_t", help="transposed right matrix container [n, k]")
    p.add_argument("output", help="output f32 tensor path")
    p.add_argument(
        "--check",
        action="store_true",
        help="also run the float reference path and fail on any mismatch",
    )
    p.set_defaults(func=_cmd_matmul)

    p = sub.add_parser("tables", help="dump code/value maps")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dtype", choices=sorted(_DTYPES))
    group.add_argument(
        "--abfloat",
        nargs="?",
        const="e2m1",
        choices=["e2m1", "e4m3"],
        help="dump an abfloat table (default e2m1)",
    )
    p.add_argument("--bias", type=int, default=None, metavar="B")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.set_defaults(func=_cmd_tables)

    p = sub.add_parser("selftest", help="verify the format tables and codecs")
    p.set_defaults(func=_cmd_selftest)

    return parser


if __name__ == "__main__":
    sys.exit(main())
