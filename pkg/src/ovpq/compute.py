"""Functional model of the exponent-integer arithmetic pipeline.

Decoded values are exponent-integer pairs <e, i> = i << e, so a multiply is
just <a, b> × <c, d> = <a+c, b×d>: one integer multiplier plus one adder,
no floating point anywhere.  Dot products accumulate materialized terms
into a 32-bit signed integer; any term or running sum that leaves the
int32 range raises AccOverflow (the model never wraps silently - the
format's 2^15 outlier clip exists precisely so this cannot happen with
in-contract inputs).

8-bit operands ride on 4-bit hardware by nibble decomposition:
x = (h << 4) + l = <4, h> + <0, l>, turning an int8 × int8 into four 4-bit
products, and an 8-bit abfloat × y into two products carrying the extra
exponent.

Everything here is pure; matrix multiplication is evaluated tile-by-tile
with a fixed lane order, so results and overflow detection points are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import OvpContainer, decode_tensor_fields
from .formats import AbfloatConfig, ExpIntPair, decode_abfloat

__all__ = [
    "AccOverflow",
    "AccResult",
    "INT32_MAX",
    "INT32_MIN",
    "ShapeMismatch",
    "edp",
    "matmul_packed",
    "matmul_reference",
    "mul8_abfloat",
    "mul8_composed",
    "mul_pair",
    "split8",
]

INT32_MAX = 2**31 - 1
INT32_MIN = -(2**31)

_ROW_BLOCK_BUDGET = 1 << 22  # int64 cells per matmul tile (~32 MiB live)


class AccOverflow(ArithmeticError):
    """A term or running sum left the 32-bit accumulator range."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible with the packed multiply."""


@dataclass(frozen=True)
class AccResult:
    """A 32-bit signed accumulator value."""

    value: int = 0

    def __post_init__(self) -> None:
        if not INT32_MIN <= self.value <= INT32_MAX:
            raise AccOverflow(f"accumulator seed {self.value} exceeds int32")


def mul_pair(p: ExpIntPair, q: ExpIntPair) -> ExpIntPair:
    """<a, b> × <c, d> = <a+c, b×d>."""
    return ExpIntPair(p.exponent + q.exponent, p.integer * q.integer)


def _materialize(p: ExpIntPair, index) -> int:
    """i << e, checked against the int32 accumulator range."""
    if p.exponent < 0:
        raise ValueError(f"cannot materialize negative exponent {p.exponent}")
    term = p.integer << p.exponent
    _check32(term, "product term", index)
    return term


def _check32(x: int, what: str, index) -> None:
    if not INT32_MIN <= x <= INT32_MAX:
        at = "" if index is None else f" at {index}"
        raise AccOverflow(f"{what} {x} exceeds int32{at}", index)


def edp(
    pairs_a: list[ExpIntPair],
    pairs_b: list[ExpIntPair],
    acc: AccResult = AccResult(0),
) -> AccResult:
    """N-element dot product of decoded pairs into a 32-bit accumulator.

    Hardware lanes come in 16 (4-bit) or 8 (8-bit) element groups; any
    length is accepted here.  Terms accumulate in lane order and every
    term and partial sum is overflow-checked, so the failure point is
    deterministic.
    """
    if len(pairs_a) != len(pairs_b):
        raise ShapeMismatch(
            f"lane counts differ: {len(pairs_a)} vs {len(pairs_b)}"
        )
    total = acc.value
    for lane, (p, q) in enumerate(zip(pairs_a, pairs_b)):
        total += _materialize(mul_pair(p, q), lane)
        _check32(total, "running sum", lane)
    return AccResult(total)


# ---------------------------------------------------------------------------
# Mixed precision: 8-bit operands on 4-bit lanes
# ---------------------------------------------------------------------------

def split8(x: int) -> tuple[int, int]:
    """Split an int8 into (high signed nibble, low unsigned nibble).

    x = (h << 4) + l with h = x >> 4 (arithmetic) in [-8, 7] and
    l = x & 0xF in [0, 15].
    """
    if not -128 <= x <= 127:
        raise ValueError(f"{x} is not an int8 value")
    return x >> 4, x & 0xF


def mul8_composed(x: int, y: int) -> int:
    """int8 × int8 via four 4-bit pair products; equals x*y exactly.

    The four cross terms <4,hx>×<4,hy>, <4,hx>×<0,ly>, <0,lx>×<4,hy>,
    <0,lx>×<0,ly> are materialized and accumulated in that fixed order.
    """
    hx, lx = split8(x)
    hy, ly = split8(y)
    terms = (
        mul_pair(ExpIntPair(4, hx), ExpIntPair(4, hy)),
        mul_pair(ExpIntPair(4, hx), ExpIntPair(0, ly)),
        mul_pair(ExpIntPair(0, lx), ExpIntPair(4, hy)),
        mul_pair(ExpIntPair(0, lx), ExpIntPair(0, ly)),
    )
    total = 0
    for pe, t in enumerate(terms):
        total += _materialize(t, pe)
        _check32(total, "running sum", pe)
    return total


def mul8_abfloat(code: int, y: ExpIntPair, cfg: AbfloatConfig) -> int:
    """8-bit abfloat × pair via nibble decomposition of the decoded integer.

    The code decodes to <e, i>; splitting i gives
    z = <4 + e, h> + <e, l>, so two 4-bit products (each carrying the
    extra exponent) reproduce the direct decoded multiply exactly.  The
    two zero-magnitude codes contribute 0, like any victim.
    """
    if cfg.width != 8:
        raise ValueError("nibble decomposition applies to the 8-bit format")
    ez, iz = decode_abfloat(code, cfg, strict=False)
    hz, lz = split8(iz)
    terms = (
        mul_pair(ExpIntPair(4 + ez, hz), y),
        mul_pair(ExpIntPair(ez, lz), y),
    )
    total = 0
    for pe, t in enumerate(terms):
        total += _materialize(t, pe)
        _check32(total, "running sum", pe)
    return total


# ---------------------------------------------------------------------------
# Packed matrix multiply
# ---------------------------------------------------------------------------

def matmul_packed(a: OvpContainer, b_t: OvpContainer) -> np.ndarray:
    """Multiply two packed matrices through the integer pipeline.

    ``a`` holds the left matrix [m, k]; ``b_t`` holds the *transposed*
    right matrix [n, k], so both operands are packed along the reduction
    axis and pair bytes feed the lanes contiguously.  k must be even
    (pairs never straddle rows).  Returns the [m, n] float result
    scale_a × scale_b × integer dot products; raises AccOverflow with
    (i, j, lane) at the first violating term or partial sum.
    """
    if len(a.shape) != 2 or len(b_t.shape) != 2:
        raise ShapeMismatch("packed matmul needs rank-2 operands")
    m, k = a.shape
    n, k2 = b_t.shape
    if k != k2:
        raise ShapeMismatch(f"inner dimensions differ: {k} vs {k2}")
    if k % 2:
        raise ShapeMismatch(f"inner dimension {k} must be even")
    ea, ia = (x.reshape(m, k) for x in decode_tensor_fields(a))
    eb, ib = (x.reshape(n, k) for x in decode_tensor_fields(b_t))

    out = np.empty((m, n), dtype=np.int64)
    block = max(1, _ROW_BLOCK_BUDGET // max(1, n * k))
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        ints = ia[i0:i1, None, :] * ib[None, :, :]
        exps = ea[i0:i1, None, :] + eb[None, :, :]
        big = (exps >= 63) & (ints != 0)
        if big.any():
            i, j, lane = (int(v) for v in np.argwhere(big)[0])
            raise AccOverflow(
                f"product term exceeds int32 at ({i0 + i}, {j}, {lane})",
                (i0 + i, j, lane),
            )
        terms = ints << np.where(ints == 0, 0, exps)
        _check_block(terms, "product term", i0)
        sums = np.cumsum(terms, axis=2)
        _check_block(sums, "running sum", i0)
        out[i0:i1] = sums[:, :, -1] if k else 0
    return (a.scale * b_t.scale) * out.astype(np.float64)


def _check_block(x: np.ndarray, what: str, row_offset: int) -> None:
    bad = (x > INT32_MAX) | (x < INT32_MIN)
    if bad.any():
        i, j, lane = (int(v) for v in np.argwhere(bad)[0])
        raise AccOverflow(
            f"{what} {int(x[i, j, lane])} exceeds int32 "
            f"at ({row_offset + i}, {j}, {lane})",
            (row_offset + i, j, lane),
        )


def matmul_reference(a: OvpContainer, b_t: OvpContainer) -> np.ndarray:
    """Float reference path: multiply the decoded grids in 8-byte floats.

    Grid values (integer × 2^exponent) are exact small floats and every
    partial sum stays an exact integer, so this must agree bit-for-bit
    with matmul_packed whenever the pipeline does not overflow.
    """
    if len(a.shape) != 2 or len(b_t.shape) != 2:
        raise ShapeMismatch("packed matmul needs rank-2 operands")
    m, k = a.shape
    n, k2 = b_t.shape
    if k != k2:
        raise ShapeMismatch(f"inner dimensions differ: {k} vs {k2}")
    ea, ia = decode_tensor_fields(a)
    eb, ib = decode_tensor_fields(b_t)
    ga = np.ldexp(ia.astype(np.float64), ea).reshape(m, k)
    gb = np.ldexp(ib.astype(np.float64), eb).reshape(n, k)
    return (a.scale * b_t.scale) * (ga @ gb.T)
