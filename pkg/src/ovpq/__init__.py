"""Outlier-victim pair quantization.

Byte-aligned mixed normal/outlier encoding of float tensors: consecutive
elements pair into one aligned unit, outliers ride an adaptive-biased
float format in the space freed by pruning their neighbor, and everything
decodes to exponent-integer pairs that an integer-only pipeline can
multiply and accumulate.
"""

from .formats import (
    AbfloatConfig,
    DisabledCode,
    ExpIntPair,
    FormatError,
    IdentifierCode,
    NormalDType,
    code_table,
    decode_abfloat,
    decode_normal,
    encode_abfloat,
    encode_normal,
    grid_values,
)
from .codec import (
    BadHeader,
    BadMagic,
    CodecError,
    CorruptPair,
    NonFiniteInput,
    OvpContainer,
    PairByte,
    QuantConfig,
    TruncatedPayload,
    UnsupportedVersion,
    decode_pair,
    decode_tensor,
    decode_tensor_fields,
    encode_pair,
    encode_tensor,
    read_container,
    read_ovt,
    write_container,
    write_ovt,
)
from .quantizer import (
    EmptyTensor,
    PairStats,
    ScaleSearchResult,
    TensorStats,
    classify_pairs,
    clipped_int_mse,
    compute_stats,
    quant_mse,
    search_scale,
    search_scale_clipped,
)
from .compute import (
    AccOverflow,
    AccResult,
    ShapeMismatch,
    edp,
    matmul_packed,
    matmul_reference,
    mul8_abfloat,
    mul8_composed,
    mul_pair,
    split8,
)

__version__ = "0.1.0"

__all__ = [
    "AbfloatConfig",
    "AccOverflow",
    "AccResult",
    "BadHeader",
    "BadMagic",
    "CodecError",
    "CorruptPair",
    "DisabledCode",
    "EmptyTensor",
    "ExpIntPair",
    "FormatError",
    "IdentifierCode",
    "NonFiniteInput",
    "NormalDType",
    "OvpContainer",
    "PairByte",
    "PairStats",
    "QuantConfig",
    "ScaleSearchResult",
    "ShapeMismatch",
    "TensorStats",
    "TruncatedPayload",
    "UnsupportedVersion",
    "classify_pairs",
    "clipped_int_mse",
    "code_table",
    "compute_stats",
    "decode_abfloat",
    "decode_normal",
    "decode_pair",
    "decode_tensor",
    "decode_tensor_fields",
    "edp",
    "encode_abfloat",
    "encode_normal",
    "encode_pair",
    "encode_tensor",
    "grid_values",
    "matmul_packed",
    "matmul_reference",
    "mul8_abfloat",
    "mul8_composed",
    "mul_pair",
    "quant_mse",
    "read_container",
    "read_ovt",
    "search_scale",
    "search_scale_clipped",
    "split8",
    "write_container",
    "write_ovt",
]
