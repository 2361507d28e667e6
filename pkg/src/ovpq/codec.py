"""Byte-aligned outlier-victim pair codec and the ``.ovp`` container format.

Two consecutive tensor elements share one aligned unit (a byte for 4-bit
formats, two bytes for int8).  A pair is either two normal codes, or one
abfloat outlier code plus the reserved identifier marking the pruned
partner (the victim).  The identifier's slot position says which side holds
the outlier, so no index structures exist anywhere: a tensor of N elements
encodes to exactly ceil(N/2) bytes (4-bit) or N bytes (int8).

Slot order follows little-endian packing: slot 1 (the first element in
memory order) is the low nibble / low byte.

Container layout (``.ovp``, little-endian):

    magic   4 bytes  "OVP1"
    version u16      1
    dtype   u8       0=int4, 1=flint4, 2=int8
    bias    u8       abfloat exponent bias
    scale   f64      real units per grid unit
    rank    u32
    dims    u32 × rank
    payload packed pair bytes, flattened row-major

Float tensors enter and leave the system as a raw little-endian f32 stream
plus a sidecar header ("OVT0", u32 rank, u32 dims[rank]).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .formats import (
    AbfloatConfig,
    DisabledCode,
    ExpIntPair,
    NormalDType,
    decode_abfloat,
    decode_abfloat_array,
    decode_normal,
    decode_normal_array,
    encode_abfloat,
    encode_abfloat_array,
    encode_normal,
    encode_normal_array,
)

__all__ = [
    "BadHeader",
    "BadMagic",
    "CodecError",
    "CorruptPair",
    "NonFiniteInput",
    "OvpContainer",
    "PairByte",
    "QuantConfig",
    "TruncatedPayload",
    "UnsupportedVersion",
    "decode_pair",
    "decode_tensor",
    "decode_tensor_fields",
    "encode_pair",
    "encode_tensor",
    "read_container",
    "read_ovt",
    "write_container",
    "write_ovt",
]

MAGIC = b"OVP1"
VERSION = 1
TENSOR_MAGIC = b"OVT0"
_MAX_RANK = 64  # sanity cap; a larger rank in a header is corruption


class CodecError(ValueError):
    """Base class for pair/tensor/container codec failures."""


class NonFiniteInput(CodecError):
    """Tensor contained NaN or infinity (before or after scaling)."""


class CorruptPair(CodecError):
    """A pair violates the format: two identifiers, or a disabled outlier code."""

    def __init__(self, message: str, element_index: int | None = None):
        super().__init__(message)
        self.element_index = element_index


class BadHeader(CodecError):
    """Container header is structurally invalid."""


class BadMagic(BadHeader):
    """Stream does not start with the expected magic."""


class UnsupportedVersion(BadHeader):
    """Container version is not supported by this reader."""


class TruncatedPayload(CodecError):
    """Stream ended before the header-declared content was complete."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantConfig:
    """Everything the pair codec needs: formats, scale, and the threshold.

    ``scale`` converts real units to grid units (values are divided by it
    before encoding).  ``threshold`` is in grid units; elements with
    |scaled| > threshold become outliers.  It must sit in the gap between
    the normal range and the abfloat range - at least the normal maximum
    (7 / 16 / 127) and strictly below the smallest abfloat magnitude -
    otherwise re-encoding a decoded tensor would not be the identity.
    """

    dtype: NormalDType = NormalDType.INT4
    abf: AbfloatConfig | None = None
    scale: float = 1.0
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.abf is None:
            object.__setattr__(
                self, "abf", AbfloatConfig(self.dtype.bits, self.dtype.default_bias)
            )
        if self.abf.width != self.dtype.bits:
            raise CodecError(
                f"abfloat width {self.abf.width} does not match {self.dtype.name}"
            )
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise CodecError(f"scale must be positive and finite, got {self.scale}")
        if self.threshold is None:
            object.__setattr__(self, "threshold", float(self.dtype.max_magnitude))
        min_outlier = self.min_outlier_magnitude
        if not self.dtype.max_magnitude <= self.threshold < min_outlier:
            raise CodecError(
                f"threshold {self.threshold} must lie in "
                f"[{self.dtype.max_magnitude}, {min_outlier}) for {self.dtype.name} "
                f"with bias {self.abf.bias}"
            )

    @property
    def min_outlier_magnitude(self) -> int:
        """Smallest magnitude the outlier format can emit."""
        return ((1 << self.abf.mantissa_bits) + 1) << self.abf.bias


# ---------------------------------------------------------------------------
# Pair level
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairByte:
    """One encoded pair: two codes packed into an aligned unit.

    ``width`` is the bits per slot; ``raw`` is one byte for width 4 and a
    two-byte little-endian unit for width 8.  Slot 1 is the low half.
    """

    raw: int
    width: int = 4

    def __post_init__(self) -> None:
        if self.width not in (4, 8):
            raise CodecError(f"slot width must be 4 or 8, got {self.width}")
        if not 0 <= self.raw < (1 << (2 * self.width)):
            raise CodecError(f"raw value {self.raw:#x} out of range")

    @property
    def slot1(self) -> int:
        return self.raw & ((1 << self.width) - 1)

    @property
    def slot2(self) -> int:
        return self.raw >> self.width


def encode_pair(v1: float, v2: float, cfg: QuantConfig) -> PairByte:
    """Encode two already-scaled values as one pair.

    If one |value| exceeds the threshold it is stored as abfloat and its
    partner is replaced by the identifier (pruned to zero).  When both
    exceed it, the larger magnitude survives; exact magnitude ties keep
    slot 1.  Otherwise both slots are normal codes.
    """
    if not (math.isfinite(v1) and math.isfinite(v2)):
        raise NonFiniteInput("pair values must be finite")
    dtype, t = cfg.dtype, cfg.threshold
    a1, a2 = abs(v1), abs(v2)
    if a1 > t and a1 >= a2:
        s1, s2 = encode_abfloat(v1, cfg.abf), dtype.identifier
    elif a2 > t:
        s1, s2 = dtype.identifier, encode_abfloat(v2, cfg.abf)
    else:
        s1, s2 = encode_normal(v1, dtype), encode_normal(v2, dtype)
    return PairByte(s1 | (s2 << dtype.bits), dtype.bits)


def decode_pair(b: PairByte, cfg: QuantConfig) -> tuple[ExpIntPair, ExpIntPair]:
    """Decode one pair to exponent-integer form; exact inverse of encode_pair.

    The identifier slot decodes to (0, 0).  Raises CorruptPair when both
    slots carry the identifier or an outlier slot holds a disabled code.
    """
    ident = cfg.dtype.identifier
    s1, s2 = b.slot1, b.slot2
    if s1 == ident and s2 == ident:
        raise CorruptPair("both slots hold the outlier identifier")
    victim = ExpIntPair(0, 0)
    try:
        if s2 == ident:
            return decode_abfloat(s1, cfg.abf), victim
        if s1 == ident:
            return victim, decode_abfloat(s2, cfg.abf)
    except DisabledCode as exc:
        raise CorruptPair(f"outlier slot holds a disabled code: {exc}") from exc
    return decode_normal(s1, cfg.dtype), decode_normal(s2, cfg.dtype)


# ---------------------------------------------------------------------------
# Tensor level
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OvpContainer:
    """An encoded tensor: header fields plus the packed payload."""

    dtype: NormalDType
    bias: int
    scale: float
    shape: tuple[int, ...]
    payload: bytes

    def __post_init__(self) -> None:
        expected = payload_size(self.dtype, self.element_count)
        if len(self.payload) != expected:
            raise CodecError(
                f"payload is {len(self.payload)} bytes, expected {expected}"
            )

    @property
    def element_count(self) -> int:
        return math.prod(self.shape)

    @property
    def config(self) -> QuantConfig:
        return QuantConfig(
            dtype=self.dtype,
            abf=AbfloatConfig(self.dtype.bits, self.bias),
            scale=self.scale,
        )


def payload_size(dtype: NormalDType, n: int) -> int:
    """Encoded payload bytes for n elements: ceil(n/2) for 4-bit, n for int8."""
    return n if dtype is NormalDType.INT8 else (n + 1) // 2


def encode_tensor(values: np.ndarray, cfg: QuantConfig) -> OvpContainer:
    """Quantize a float tensor: divide by scale, pair consecutive elements
    in flattened row-major order, and pack.

    An odd element count is padded with one zero element.  For 4-bit
    formats the padding nibble is stored (and may hold the identifier when
    the tail element is an outlier); for int8 the tail is a lone byte with
    no partner to mark, so it is always a normal (saturating) code.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        idx = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise NonFiniteInput(f"non-finite element at flat index {idx}")
    scaled = arr.ravel() / cfg.scale
    if scaled.size and not np.isfinite(scaled).all():
        raise NonFiniteInput("values overflow after dividing by scale")
    if cfg.dtype is NormalDType.INT8:
        payload = _encode_payload_int8(scaled, cfg)
    else:
        payload = _encode_payload_4bit(scaled, cfg)
    return OvpContainer(cfg.dtype, cfg.abf.bias, cfg.scale, arr.shape, payload)


def _encode_slots(pairs: np.ndarray, cfg: QuantConfig) -> tuple[np.ndarray, np.ndarray]:
    """Apply the pair rule to a (k, 2) scaled array; returns slot code arrays."""
    a = np.abs(pairs)
    out1 = (a[:, 0] > cfg.threshold) & (a[:, 0] >= a[:, 1])
    out2 = (a[:, 1] > cfg.threshold) & ~out1
    normal = encode_normal_array(pairs, cfg.dtype)
    outlier_mask = np.stack([out1, out2], axis=1)
    abf = encode_abfloat_array(np.where(outlier_mask, pairs, 1.0), cfg.abf)
    ident = cfg.dtype.identifier
    slot1 = np.where(out1, abf[:, 0], np.where(out2, ident, normal[:, 0]))
    slot2 = np.where(out2, abf[:, 1], np.where(out1, ident, normal[:, 1]))
    return slot1.astype(np.uint8), slot2.astype(np.uint8)


def _encode_payload_4bit(scaled: np.ndarray, cfg: QuantConfig) -> bytes:
    if scaled.size % 2:
        scaled = np.append(scaled, 0.0)
    slot1, slot2 = _encode_slots(scaled.reshape(-1, 2), cfg)
    return (slot1 | (slot2 << 4)).astype(np.uint8).tobytes()


def _encode_payload_int8(scaled: np.ndarray, cfg: QuantConfig) -> bytes:
    n = scaled.size
    even = n - (n % 2)
    slot1, slot2 = _encode_slots(scaled[:even].reshape(-1, 2), cfg)
    out = np.empty(n, dtype=np.uint8)
    out[0:even:2] = slot1
    out[1:even:2] = slot2
    if n % 2:
        out[-1] = encode_normal(float(scaled[-1]), cfg.dtype)
    return out.tobytes()


def decode_tensor_fields(c: OvpContainer) -> tuple[np.ndarray, np.ndarray]:
    """Decode a container to flat (exponent, integer) int64 arrays.

    This is the form the compute pipeline consumes; victims come out as
    (0, 0) and padding is stripped.  Raises CorruptPair with the flat
    element index of the first offending pair.
    """
    n = c.element_count
    ident = c.dtype.identifier
    abf = AbfloatConfig(c.dtype.bits, c.bias)
    raw = np.frombuffer(c.payload, dtype=np.uint8).astype(np.int64)
    if c.dtype is NormalDType.INT8:
        even = n - (n % 2)
        s1, s2 = raw[0:even:2], raw[1:even:2]
        tail = raw[even:]
    else:
        s1, s2 = raw & 0xF, raw >> 4
        tail = None

    both = (s1 == ident) & (s2 == ident)
    if both.any():
        at = 2 * int(np.argmax(both))
        raise CorruptPair(
            f"both slots hold the outlier identifier (element {at})", at
        )
    o1, o2 = s2 == ident, s1 == ident
    disabled = (o1 & ((s1 & abf.magnitude_mask) == 0)) | (
        o2 & ((s2 & abf.magnitude_mask) == 0)
    )
    if disabled.any():
        at = 2 * int(np.argmax(disabled))
        raise CorruptPair(f"outlier slot holds a disabled code (element {at})", at)

    ne, ni = decode_normal_array(np.stack([s1, s2]), c.dtype)
    ae, ai = decode_abfloat_array(np.stack([s1, s2]), abf)
    victim = np.stack([o2, o1])
    outlier = np.stack([o1, o2])
    e = np.where(victim, 0, np.where(outlier, ae, ne))
    i = np.where(victim, 0, np.where(outlier, ai, ni))

    exps = np.empty(n, dtype=np.int64)
    ints = np.empty(n, dtype=np.int64)
    even = 2 * s1.size
    take = min(even, n)
    exps[0:take:2], ints[0:take:2] = e[0, : (take + 1) // 2], i[0, : (take + 1) // 2]
    exps[1:take:2], ints[1:take:2] = e[1, : take // 2], i[1, : take // 2]
    if tail is not None and tail.size:
        if int(tail[0]) == ident:
            raise CorruptPair(
                f"lone tail byte holds the outlier identifier (element {n - 1})",
                n - 1,
            )
        te, ti = decode_normal_array(tail, c.dtype)
        exps[n - 1], ints[n - 1] = te[0], ti[0]
    return exps, ints


def decode_tensor(c: OvpContainer) -> np.ndarray:
    """Dequantize a container: scale × integer × 2^exponent, shape restored."""
    exps, ints = decode_tensor_fields(c)
    values = np.ldexp(ints.astype(np.float64), exps) * c.scale
    return values.reshape(c.shape)


# ---------------------------------------------------------------------------
# Container serialization
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHBBdI")


def write_container(c: OvpContainer) -> bytes:
    """Serialize a container to its byte-exact stream form."""
    head = _HEADER.pack(
        MAGIC, VERSION, c.dtype.value, c.bias, c.scale, len(c.shape)
    )
    dims = struct.pack(f"<{len(c.shape)}I", *c.shape)
    return head + dims + c.payload


def read_container(data: bytes) -> OvpContainer:
    """Parse a container stream; the exact inverse of write_container."""
    if len(data) < 4:
        raise TruncatedPayload("stream shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayload("stream ends inside the fixed header")
    _, version, tag, bias, scale, rank = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    try:
        dtype = NormalDType(tag)
    except ValueError:
        raise BadHeader(f"unknown dtype tag {tag}") from None
    if not (math.isfinite(scale) and scale > 0):
        raise BadHeader(f"scale must be positive and finite, got {scale}")
    if rank > _MAX_RANK:
        raise BadHeader(f"rank {rank} exceeds the sanity limit {_MAX_RANK}")
    offset = _HEADER.size + 4 * rank
    if len(data) < offset:
        raise TruncatedPayload("stream ends inside the dims list")
    shape = struct.unpack_from(f"<{rank}I", data, _HEADER.size)
    expected = payload_size(dtype, math.prod(shape))
    if len(data) - offset < expected:
        raise TruncatedPayload(
            f"payload is {len(data) - offset} bytes, header promises {expected}"
        )
    if len(data) - offset > expected:
        raise BadHeader(f"{len(data) - offset - expected} trailing bytes")
    return OvpContainer(dtype, bias, scale, tuple(shape), data[offset:])


# ---------------------------------------------------------------------------
# Float tensor I/O (raw f32 stream + sidecar header)
# ---------------------------------------------------------------------------

def write_ovt(arr: np.ndarray) -> tuple[bytes, bytes]:
    """Serialize a float tensor; returns (data stream, sidecar header)."""
    a = np.asarray(arr, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return a.tobytes(), header


def read_ovt(data: bytes, header: bytes) -> np.ndarray:
    """Parse a float tensor from its data stream and sidecar header."""
    if len(header) < 4 or header[:4] != TENSOR_MAGIC:
        raise BadMagic(f"bad tensor magic {header[:4]!r}")
    if len(header) < 8:
        raise TruncatedPayload("tensor header ends inside the rank field")
    (rank,) = struct.unpack_from("<I", header, 4)
    if rank > _MAX_RANK:
        raise BadHeader(f"rank {rank} exceeds the sanity limit {_MAX_RANK}")
    if len(header) < 8 + 4 * rank:
        raise TruncatedPayload("tensor header ends inside the dims list")
    shape = struct.unpack_from(f"<{rank}I", header, 8)
    n = math.prod(shape)
    if len(data) < 4 * n:
        raise TruncatedPayload(f"tensor data is {len(data)} bytes, need {4 * n}")
    if len(data) > 4 * n:
        raise BadHeader(f"{len(data) - 4 * n} trailing bytes in tensor data")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()
