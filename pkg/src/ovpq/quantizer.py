"""Tensor outlier statistics and the MSE-minimizing scale-factor search.

Calibration works from the empirical 3-sigma rule: fit the tensor as a
normal distribution (population moments), call everything beyond 3 sigma an
outlier, and start the scale search at the point that maps 3 sigma onto the
edge of the normal-value range.  Candidate scales are then swept
geometrically around that starting point and scored by full round-trip
quantization MSE; preserved outliers, pruned victims, and rounding error
all land in the same objective, so no separate outlier-ratio control is
needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import QuantConfig, decode_tensor, encode_tensor
from .formats import AbfloatConfig, NormalDType

__all__ = [
    "EmptyTensor",
    "PairStats",
    "ScaleSearchResult",
    "TensorStats",
    "classify_pairs",
    "clipped_int_mse",
    "compute_stats",
    "quant_mse",
    "search_scale",
    "search_scale_clipped",
]

DEFAULT_WINDOW_LO = 0.25
DEFAULT_WINDOW_HI = 4.0
DEFAULT_STEPS = 64


class EmptyTensor(ValueError):
    """Statistics and search need at least one element."""


@dataclass(frozen=True)
class TensorStats:
    """Sigma-based outlier statistics of one tensor.

    ``sigma`` is the population standard deviation; the >k-sigma fractions
    count elements with |x - mu| > k*sigma.  ``max_sigma_ratio`` is
    max|x| / sigma, or None when sigma is zero (degenerate tensor).
    """

    mu: float
    sigma: float
    max_abs: float
    max_sigma_ratio: float | None
    frac_gt_3sigma: float
    frac_gt_6sigma: float


@dataclass(frozen=True)
class PairStats:
    """Fractions of normal-normal, outlier-normal, outlier-outlier pairs."""

    nn: float
    on: float
    oo: float


@dataclass(frozen=True)
class ScaleSearchResult:
    scale: float
    mse: float
    candidates_evaluated: int
    initial_scale: float


def compute_stats(values: np.ndarray) -> TensorStats:
    """Population moments and outlier fractions of a tensor."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptyTensor("cannot compute statistics of an empty tensor")
    mu = float(a.mean())
    sigma = float(a.std())
    max_abs = float(np.abs(a).max())
    if sigma == 0.0:
        return TensorStats(mu, sigma, max_abs, None, 0.0, 0.0)
    centered = np.abs(a - mu)
    return TensorStats(
        mu=mu,
        sigma=sigma,
        max_abs=max_abs,
        max_sigma_ratio=max_abs / sigma,
        frac_gt_3sigma=float(np.mean(centered > 3.0 * sigma)),
        frac_gt_6sigma=float(np.mean(centered > 6.0 * sigma)),
    )


def classify_pairs(values: np.ndarray, threshold: float) -> PairStats:
    """Classify consecutive non-overlapping pairs by outlier count.

    An element is an outlier when |x| > threshold.  An odd tail element is
    paired with an implicit zero, exactly as the codec pads.  Pairing is
    positional, so this is deliberately not permutation-invariant.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptyTensor("cannot classify pairs of an empty tensor")
    if a.size % 2:
        a = np.append(a, 0.0)
    counts = (np.abs(a.reshape(-1, 2)) > threshold).sum(axis=1)
    pairs = counts.size
    return PairStats(
        nn=float(np.count_nonzero(counts == 0)) / pairs,
        on=float(np.count_nonzero(counts == 1)) / pairs,
        oo=float(np.count_nonzero(counts == 2)) / pairs,
    )


def quant_mse(values: np.ndarray, cfg: QuantConfig) -> float:
    """Mean squared error of the full encode/decode round trip."""
    arr = np.asarray(values, dtype=np.float64)
    restored = decode_tensor(encode_tensor(arr, cfg))
    return float(np.mean((arr - restored) ** 2)) if arr.size else 0.0


def clipped_int_mse(values: np.ndarray, dtype: NormalDType, scale: float) -> float:
    """MSE of plain clipped integer quantization (no outlier handling).

    The baseline the pair codec is measured against: round half away from
    zero, clamp to ±max_magnitude, rescale.
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    mag = np.abs(a) / scale
    f = np.floor(mag)
    q = np.minimum(f + (mag - f >= 0.5), dtype.max_magnitude)
    restored = np.copysign(q, a) * scale
    return float(np.mean((a - restored) ** 2))


# ---------------------------------------------------------------------------
# Scale search
# ---------------------------------------------------------------------------

def _candidate_scales(s0: float, lo: float, hi: float, steps: int) -> list[float]:
    """Geometric sweep over [lo*s0, hi*s0] with s0 always included."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0 < lo <= hi:
        raise ValueError(f"window [{lo}, {hi}] must satisfy 0 < lo <= hi")
    if steps == 1:
        return [s0]
    ratio = hi / lo
    grid = [s0 * lo * ratio ** (k / (steps - 1)) for k in range(steps)]
    if s0 not in grid:
        grid.append(s0)
    return sorted(grid)


def _argmin_mse(candidates: list[float], mse_of) -> tuple[float, float]:
    """Smallest-MSE candidate; ties resolve to the smaller scale."""
    best_scale = best_mse = None
    for s in candidates:  # ascending, so strict < keeps the smaller scale on ties
        m = mse_of(s)
        if best_mse is None or m < best_mse:
            best_scale, best_mse = s, m
    return best_scale, best_mse


def search_scale(
    values: np.ndarray,
    dtype: NormalDType,
    abf: AbfloatConfig | None = None,
    *,
    window_lo: float = DEFAULT_WINDOW_LO,
    window_hi: float = DEFAULT_WINDOW_HI,
    steps: int = DEFAULT_STEPS,
) -> ScaleSearchResult:
    """Find the pair-codec scale with the smallest round-trip MSE.

    The initial scale s0 maps the 3-sigma point onto the normal-range
    maximum; candidates sweep [window_lo*s0, window_hi*s0] geometrically
    (s0 itself is always evaluated).  A zero-sigma tensor falls back to
    max_abs / max_magnitude with no sweep.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise EmptyTensor("cannot search scale of an empty tensor")
    if abf is None:
        abf = AbfloatConfig(dtype.bits, dtype.default_bias)

    def mse_of(s: float) -> float:
        return quant_mse(a, QuantConfig(dtype=dtype, abf=abf, scale=s))

    return _run_search(a, dtype, mse_of, window_lo, window_hi, steps)


def search_scale_clipped(
    values: np.ndarray,
    dtype: NormalDType,
    *,
    window_lo: float = DEFAULT_WINDOW_LO,
    window_hi: float = DEFAULT_WINDOW_HI,
    steps: int = DEFAULT_STEPS,
) -> ScaleSearchResult:
    """Same search harness over the plain clipped-integer baseline."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise EmptyTensor("cannot search scale of an empty tensor")

    def mse_of(s: float) -> float:
        return clipped_int_mse(a, dtype, s)

    return _run_search(a, dtype, mse_of, window_lo, window_hi, steps)


def _run_search(
    a: np.ndarray,
    dtype: NormalDType,
    mse_of,
    window_lo: float,
    window_hi: float,
    steps: int,
) -> ScaleSearchResult:
    sigma = float(a.std())
    if sigma == 0.0:
        max_abs = float(np.abs(a).max())
        s0 = max_abs / dtype.max_magnitude if max_abs > 0 else 1.0
        return ScaleSearchResult(s0, mse_of(s0), 1, s0)
    s0 = 3.0 * sigma / dtype.max_magnitude
    candidates = _candidate_scales(s0, window_lo, window_hi, steps)
    best_scale, best_mse = _argmin_mse(candidates, mse_of)
    return ScaleSearchResult(best_scale, best_mse, len(candidates), s0)
