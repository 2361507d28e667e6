"""Scalar codecs and value tables for every number format in the system.

Three normal-value formats, each with one reserved identifier code that is
never a legal value:

    int4    two's complement, values 0, ±1 … ±7; identifier 1000b (-8)
    flint4  hybrid float/int, values 0, ±1, ±2, ±3, ±4, ±6, ±8, ±16;
            identifier 1000b (-0)
    int8    two's complement, values 0, ±1 … ±127; identifier 1000 0000b

and the outlier format abfloat (adaptive-biased float), a fixed-point
float-like code

    sign × (1 << mb + mantissa) << (exponent_field + bias)

with mb = 1 for the 4-bit E2M1 layout (1 sign, 2 exponent, 1 mantissa bit)
and mb = 3 for the 8-bit E4M3 layout (1 sign, 4 exponent, 3 mantissa bits).
A magnitude field of all zeros means 0, so the two codes 0…0 and 10…0 are
*disabled* for outlier slots (10…0 would collide with the identifier).

Everything decodes to a common exponent-integer pair (e, i) representing
i × 2^e, the form consumed by the integer compute pipeline.

All tables are built at import time; every function here is pure and
thread-safe.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

__all__ = [
    "AbfloatConfig",
    "DisabledCode",
    "ExpIntPair",
    "FormatError",
    "IdentifierCode",
    "NormalDType",
    "decode_abfloat",
    "decode_normal",
    "encode_abfloat",
    "encode_normal",
    "grid_values",
    "code_table",
]

OUTLIER_CLIP = 1 << 15  # |decoded outlier| ceiling for 8-bit abfloat


class FormatError(ValueError):
    """A code was used outside its format contract."""


class IdentifierCode(FormatError):
    """The reserved outlier identifier reached a normal-value decoder."""


class DisabledCode(FormatError):
    """A disabled abfloat code (0…0 / 10…0) reached a strict decoder."""


class ExpIntPair(NamedTuple):
    """Decoded value as (exponent, integer), meaning integer × 2^exponent."""

    exponent: int
    integer: int

    @property
    def value(self) -> int | float:
        if self.exponent >= 0:
            return self.integer * (1 << self.exponent)
        return self.integer / (1 << -self.exponent)


# ---------------------------------------------------------------------------
# Normal-value formats
# ---------------------------------------------------------------------------

class NormalDType(enum.Enum):
    """Normal-value format selector; `.value` is the container tag byte."""

    INT4 = 0
    FLINT4 = 1
    INT8 = 2

    @property
    def bits(self) -> int:
        return 8 if self is NormalDType.INT8 else 4

    @property
    def identifier(self) -> int:
        """The reserved outlier-identifier code (sign bit only set)."""
        return 1 << (self.bits - 1)

    @property
    def max_magnitude(self) -> int:
        """Largest representable |value| (7 / 16 / 127)."""
        return _NORMAL_MAX[self]

    @property
    def default_bias(self) -> int:
        """Abfloat bias making the outlier range complementary (2 / 3 / 4)."""
        return _DEFAULT_BIAS[self]


_NORMAL_MAX = {NormalDType.INT4: 7, NormalDType.FLINT4: 16, NormalDType.INT8: 127}
_DEFAULT_BIAS = {NormalDType.INT4: 2, NormalDType.FLINT4: 3, NormalDType.INT8: 4}

# flint4 is sign|magnitude with a monotone magnitude table; 1000b (-0) is the
# identifier.  Decomposition keeps the integer part in {0, 1, 3} so that, like
# abfloat, the decoded integer stays narrow.
_FLINT_MAGNITUDES = (0, 1, 2, 3, 4, 6, 8, 16)
_FLINT_PAIRS = (
    ExpIntPair(0, 0),
    ExpIntPair(0, 1),
    ExpIntPair(1, 1),
    ExpIntPair(0, 3),
    ExpIntPair(2, 1),
    ExpIntPair(1, 3),
    ExpIntPair(3, 1),
    ExpIntPair(4, 1),
)


def decode_normal(code: int, dtype: NormalDType) -> ExpIntPair:
    """Decode a normal-value code to its exponent-integer pair.

    Raises IdentifierCode for the reserved identifier: identifiers mark
    victim slots and must be routed through the pair decoder, never here.
    """
    n = dtype.bits
    if not 0 <= code < (1 << n):
        raise FormatError(f"code {code:#x} out of range for {dtype.name}")
    if code == dtype.identifier:
        raise IdentifierCode(f"{code:#06b} is the {dtype.name} outlier identifier")
    if dtype is NormalDType.FLINT4:
        pair = _FLINT_PAIRS[code & 0x7]
        return ExpIntPair(pair.exponent, -pair.integer) if code & 0x8 else pair
    # two's complement, exponent always 0
    i = code - (1 << n) if code >= (1 << (n - 1)) else code
    return ExpIntPair(0, i)


def encode_normal(value: float, dtype: NormalDType) -> int:
    """Code of the representable normal value nearest to ``value``.

    Ties round away from zero; magnitudes beyond the format saturate at
    ±max_magnitude.  The identifier is never produced.
    """
    if not math.isfinite(value):
        raise FormatError("normal encoding requires a finite value")
    if dtype is NormalDType.FLINT4:
        mag_idx = _nearest_index(_FLINT_MIDPOINTS, abs(value))
        if mag_idx == 0:
            return 0
        return (0x8 if value < 0 else 0) | mag_idx
    limit = dtype.max_magnitude
    mag = min(_round_half_away(abs(value)), limit)
    i = -mag if value < 0 else mag
    return i & ((1 << dtype.bits) - 1)


def _round_half_away(x: float) -> int:
    """round(x) with halves away from zero, exact for x ≥ 0."""
    f = math.floor(x)
    return f + 1 if x - f >= 0.5 else f


def _nearest_index(midpoints: tuple[float, ...], mag: float) -> int:
    """Index into an ascending magnitude grid; ties go to the larger entry."""
    idx = 0
    for m in midpoints:
        if mag >= m:
            idx += 1
        else:
            break
    return idx


def _midpoints(mags: tuple[int, ...]) -> tuple[float, ...]:
    return tuple((a + b) / 2 for a, b in zip(mags, mags[1:]))


_FLINT_MIDPOINTS = _midpoints(_FLINT_MAGNITUDES)


# ---------------------------------------------------------------------------
# Abfloat (adaptive-biased float)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbfloatConfig:
    """Outlier-format parameters.

    width 4 selects E2M1 (2-bit exponent field, mb=1); width 8 selects E4M3
    (4-bit exponent field, mb=3).  ``bias`` shifts the whole value range up
    by 2^bias so it sits above the normal-value range.  ``clip`` keeps every
    *emitted* 8-bit code at |value| ≤ 2^15 so any product of two outliers
    fits the 32-bit accumulator; it never affects decoding.
    """

    width: int = 4
    bias: int = 2
    clip: bool = True

    def __post_init__(self) -> None:
        if self.width not in (4, 8):
            raise FormatError(f"abfloat width must be 4 or 8, got {self.width}")
        if self.bias < 0:
            raise FormatError("abfloat bias must be non-negative")

    @property
    def mantissa_bits(self) -> int:
        return 1 if self.width == 4 else 3

    @property
    def exponent_bits(self) -> int:
        return 2 if self.width == 4 else 4

    @property
    def exp_field_max(self) -> int:
        return (1 << self.exponent_bits) - 1

    @property
    def sign_mask(self) -> int:
        return 1 << (self.width - 1)

    @property
    def magnitude_mask(self) -> int:
        return self.sign_mask - 1

    def is_disabled(self, code: int) -> bool:
        """True for the two codes with zero magnitude field (0…0, 10…0)."""
        return (code & self.magnitude_mask) == 0

    def is_emittable(self, code: int) -> bool:
        """True if the encoder can produce this code (not disabled, under clip)."""
        if self.is_disabled(code):
            return False
        return (code & self.magnitude_mask) <= self._unsigned_ceiling()

    def _unsigned_ceiling(self) -> int:
        """Largest unsigned magnitude code the encoder may emit."""
        top = self.magnitude_mask
        if self.width == 8 and self.clip:
            # unsigned codes are value-ordered, so scan down to the clip
            while top > 1 and _unsigned_value(top, self) > OUTLIER_CLIP:
                top -= 1
        return top


def _unsigned_value(ucode: int, cfg: AbfloatConfig) -> int:
    """Decoded magnitude of an unsigned (sign-stripped) abfloat code."""
    mb = cfg.mantissa_bits
    if ucode == 0:
        return 0
    field = ucode >> mb
    mantissa = ucode & ((1 << mb) - 1)
    return ((1 << mb) + mantissa) << (cfg.bias + field)


def decode_abfloat(code: int, cfg: AbfloatConfig, *, strict: bool = True) -> ExpIntPair:
    """Decode an abfloat code: (bias + exponent_field, sign × (1<<mb | mantissa)).

    A zero magnitude field decodes to integer 0.  With ``strict`` (the
    library default) the two disabled codes raise DisabledCode, since a
    valid outlier slot can never hold them; pass strict=False to tolerate
    them when scanning foreign data.
    """
    if not 0 <= code < (1 << cfg.width):
        raise FormatError(f"code {code:#x} out of range for {cfg.width}-bit abfloat")
    if cfg.is_disabled(code):
        if strict:
            raise DisabledCode(
                f"{code:#0{cfg.width + 2}b} is disabled for {cfg.width}-bit abfloat"
            )
        return ExpIntPair(cfg.bias, 0)
    mb = cfg.mantissa_bits
    field = (code & cfg.magnitude_mask) >> mb
    integer = (1 << mb) | (code & ((1 << mb) - 1))
    if code & cfg.sign_mask:
        integer = -integer
    return ExpIntPair(cfg.bias + field, integer)


def encode_abfloat(value: float, cfg: AbfloatConfig) -> int:
    """Encode a nonzero finite value as an abfloat code.

    Fixed-point float encoding: take exp = floor(log2 |v|) - mb, round the
    base integer |v| / 2^exp (ties away from zero), carry into the exponent
    when it overflows the mantissa range, then subtract the bias.  Exponent
    underflow saturates to the smallest nonzero code, overflow to the
    largest; 8-bit codes additionally respect the 2^15 clip.  Never returns
    a disabled code.
    """
    if value == 0 or not math.isfinite(value):
        raise FormatError("outlier encoding requires a nonzero finite value")
    mb = cfg.mantissa_bits
    mag = abs(value)
    _, e2 = math.frexp(mag)  # mag = m × 2^e2, m ∈ [0.5, 1)
    exp = (e2 - 1) - mb
    if exp - cfg.bias < -1:
        ucode = 1  # certain underflow even after a carry
    elif exp - cfg.bias > cfg.exp_field_max:
        ucode = cfg.magnitude_mask  # certain overflow
    else:
        base = _round_half_away(math.ldexp(mag, -exp))
        if base == 1 << (mb + 1):
            exp += 1
            base >>= 1
        field = exp - cfg.bias
        mantissa = base - (1 << mb)
        if field < 0 or (field == 0 and mantissa == 0):
            ucode = 1  # below the smallest nonzero representable
        elif field > cfg.exp_field_max:
            ucode = cfg.magnitude_mask
        else:
            ucode = (field << mb) | mantissa
    ucode = min(ucode, cfg._unsigned_ceiling())
    return ucode | (cfg.sign_mask if value < 0 else 0)


# ---------------------------------------------------------------------------
# Grids and code tables
# ---------------------------------------------------------------------------

def grid_values(fmt: Union[NormalDType, AbfloatConfig]) -> list[int]:
    """Sorted, duplicate-free list of representable values.

    For a NormalDType this is every value except the identifier; for an
    AbfloatConfig it is every value the encoder can emit (disabled codes
    excluded, 8-bit clip honored).
    """
    if isinstance(fmt, NormalDType):
        if fmt is NormalDType.FLINT4:
            mags = [m for m in _FLINT_MAGNITUDES if m != 0]
        else:
            mags = list(range(1, fmt.max_magnitude + 1))
        return [-m for m in reversed(mags)] + [0] + mags
    mags = [
        _unsigned_value(u, fmt)
        for u in range(1, fmt.magnitude_mask + 1)
        if fmt.is_emittable(u)
    ]
    return [-m for m in reversed(mags)] + mags


def code_table(fmt: Union[NormalDType, AbfloatConfig]) -> list[dict]:
    """Exhaustive code → value map with each code's role.

    Roles: "value" (a representable value), "identifier" (the reserved
    victim marker), "disabled" (zero-magnitude abfloat code), "clipped"
    (decodable but never emitted because of the 8-bit 2^15 clip).
    """
    rows = []
    if isinstance(fmt, NormalDType):
        for code in range(1 << fmt.bits):
            if code == fmt.identifier:
                rows.append(_row(code, fmt.bits, None, "identifier"))
            else:
                rows.append(_row(code, fmt.bits, decode_normal(code, fmt), "value"))
        return rows
    for code in range(1 << fmt.width):
        if fmt.is_disabled(code):
            rows.append(_row(code, fmt.width, None, "disabled"))
            continue
        role = "value" if fmt.is_emittable(code) else "clipped"
        rows.append(_row(code, fmt.width, decode_abfloat(code, fmt), role))
    return rows


def _row(code: int, bits: int, pair: ExpIntPair | None, role: str) -> dict:
    return {
        "code": code,
        "bits": format(code, f"0{bits}b"),
        "exponent": None if pair is None else pair.exponent,
        "integer": None if pair is None else pair.integer,
        "value": None if pair is None else pair.value,
        "role": role,
    }


# ---------------------------------------------------------------------------
# Vectorized codecs (bulk variants of the scalar operations above)
# ---------------------------------------------------------------------------
# The tensor codec works on whole arrays; these mirror the scalar functions
# exactly and are cross-checked against them in the test suite.

def encode_normal_array(values: np.ndarray, dtype: NormalDType) -> np.ndarray:
    """encode_normal over a float array; returns uint8 codes."""
    v = np.asarray(values, dtype=np.float64)
    mag = np.abs(v)
    if dtype is NormalDType.FLINT4:
        mids = np.asarray(_FLINT_MIDPOINTS)
        idx = np.searchsorted(mids, mag, side="right")
        codes = np.where((v < 0) & (idx > 0), idx | 0x8, idx)
        return codes.astype(np.uint8)
    limit = dtype.max_magnitude
    f = np.floor(mag)
    rounded = np.minimum(f + (mag - f >= 0.5), limit).astype(np.int64)
    signed = np.where(v < 0, -rounded, rounded)
    return (signed & ((1 << dtype.bits) - 1)).astype(np.uint8)


def decode_normal_array(codes: np.ndarray, dtype: NormalDType) -> tuple[np.ndarray, np.ndarray]:
    """decode_normal over a code array; returns (exponents, integers) int64.

    Identifier codes are the caller's problem (the pair decoder masks them
    out before calling); they decode here as the raw two's-complement /
    sign-magnitude reading.
    """
    c = np.asarray(codes, dtype=np.int64)
    if dtype is NormalDType.FLINT4:
        exps = np.asarray([p.exponent for p in _FLINT_PAIRS], dtype=np.int64)
        ints = np.asarray([p.integer for p in _FLINT_PAIRS], dtype=np.int64)
        e = exps[c & 0x7]
        i = np.where(c & 0x8, -ints[c & 0x7], ints[c & 0x7])
        return e, i
    half = 1 << (dtype.bits - 1)
    i = np.where(c >= half, c - (1 << dtype.bits), c)
    return np.zeros_like(i), i


def encode_abfloat_array(values: np.ndarray, cfg: AbfloatConfig) -> np.ndarray:
    """encode_abfloat over a float array of nonzero values; uint8 codes."""
    v = np.asarray(values, dtype=np.float64)
    mb = cfg.mantissa_bits
    mag = np.abs(v)
    _, e2 = np.frexp(np.where(mag == 0, 1.0, mag))  # guard: zeros never emitted
    exp = (e2.astype(np.int64) - 1) - mb
    in_range = np.abs(exp - cfg.bias) <= cfg.exp_field_max + 1
    x = np.ldexp(np.where(in_range, mag, 1.0), -np.where(in_range, exp, 0))
    f = np.floor(x)
    base = (f + (x - f >= 0.5)).astype(np.int64)
    carry = base == 1 << (mb + 1)
    exp = exp + carry
    base = np.where(carry, base >> 1, base)
    field = exp - cfg.bias
    mantissa = base - (1 << mb)
    ucode = (field << mb) | mantissa
    ucode = np.where((field < 0) | ((field == 0) & (mantissa == 0)), 1, ucode)
    ucode = np.where(field > cfg.exp_field_max, cfg.magnitude_mask, ucode)
    ucode = np.minimum(ucode, cfg._unsigned_ceiling())
    return (ucode | np.where(v < 0, cfg.sign_mask, 0)).astype(np.uint8)


def decode_abfloat_array(codes: np.ndarray, cfg: AbfloatConfig) -> tuple[np.ndarray, np.ndarray]:
    """decode_abfloat (lenient) over a code array; (exponents, integers)."""
    c = np.asarray(codes, dtype=np.int64)
    mb = cfg.mantissa_bits
    magfield = c & cfg.magnitude_mask
    e = cfg.bias + (magfield >> mb)
    i = np.where(magfield == 0, 0, (1 << mb) | (c & ((1 << mb) - 1)))
    i = np.where(c & cfg.sign_mask, -i, i)
    return e, i
