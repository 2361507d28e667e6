"""Statistics, pair classification, and scale-search tests.

Statistical expectations come from the standard normal CDF:
P(|Z| > 3) = 2(1 - Phi(3)) = 0.0026998, P(both of an independent pair > 3)
is that squared, ~7.3e-6.
"""

import math

import numpy as np
import pytest

from ovpq.codec import QuantConfig, decode_tensor, encode_tensor
from ovpq.formats import AbfloatConfig, NormalDType
from ovpq.quantizer import (
    EmptyTensor,
    _argmin_mse,
    _candidate_scales,
    classify_pairs,
    clipped_int_mse,
    compute_stats,
    quant_mse,
    search_scale,
    search_scale_clipped,
)

P_GT_3SIGMA = 2 * (1 - 0.5 * (1 + math.erf(3 / math.sqrt(2))))  # 0.0026998


class TestComputeStats:
    def test_small_example(self):
        s = compute_stats(np.array([1.0, 2.0, 3.0, 4.0]))
        assert s.mu == 2.5
        assert s.sigma == pytest.approx(math.sqrt(1.25), abs=1e-12)
        assert s.max_abs == 4.0
        assert s.max_sigma_ratio == pytest.approx(4.0 / math.sqrt(1.25))

    def test_population_not_sample_sigma(self):
        # sample std (ddof=1) of [1,2,3,4] would be sqrt(5/3) ≈ 1.29
        s = compute_stats(np.array([1.0, 2.0, 3.0, 4.0]))
        assert s.sigma < 1.2

    def test_constant_tensor_degenerate(self):
        s = compute_stats(np.array([5.0, 5.0, 5.0]))
        assert s.sigma == 0.0
        assert s.max_sigma_ratio is None
        assert s.frac_gt_3sigma == 0.0
        assert s.frac_gt_6sigma == 0.0

    def test_gaussian_fractions(self):
        rng = np.random.default_rng(42)
        s = compute_stats(rng.standard_normal(1_000_000))
        assert s.frac_gt_3sigma == pytest.approx(P_GT_3SIGMA, abs=5e-4)
        assert s.frac_gt_6sigma < 1e-5
        assert s.frac_gt_6sigma <= s.frac_gt_3sigma

    def test_fractions_use_centered_values(self):
        # a large offset must not turn everything into an "outlier"
        rng = np.random.default_rng(1)
        s = compute_stats(rng.standard_normal(100_000) + 1000.0)
        assert s.frac_gt_3sigma == pytest.approx(P_GT_3SIGMA, abs=2e-3)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        v = rng.normal(3, 2, 10_001)
        a, b = compute_stats(v), compute_stats(rng.permutation(v))
        assert a.mu == pytest.approx(b.mu, rel=1e-12)
        assert a.sigma == pytest.approx(b.sigma, rel=1e-12)
        assert a.max_abs == b.max_abs
        assert a.frac_gt_3sigma == b.frac_gt_3sigma

    def test_empty(self):
        with pytest.raises(EmptyTensor):
            compute_stats(np.zeros((0,)))


class TestClassifyPairs:
    def test_example(self):
        ps = classify_pairs(np.array([0.1, 5.0, 0.2, 0.3]), 3.0)
        assert (ps.nn, ps.on, ps.oo) == (0.5, 0.5, 0.0)

    def test_all_normal(self):
        ps = classify_pairs(np.array([1.0, -2.0, 0.5, 0.1]), 3.0)
        assert ps.nn == 1.0

    def test_odd_tail_pairs_with_zero(self):
        ps = classify_pairs(np.array([5.0]), 3.0)
        assert (ps.nn, ps.on, ps.oo) == (0.0, 1.0, 0.0)

    def test_fractions_sum_to_one(self):
        rng = np.random.default_rng(3)
        for n in (1, 2, 5, 100, 101):
            ps = classify_pairs(rng.normal(0, 5, n), 3.0)
            assert ps.nn + ps.on + ps.oo == pytest.approx(1.0, abs=1e-12)

    def test_positional_not_permutation_invariant(self):
        before = classify_pairs(np.array([0.1, 5.0, 5.0, 0.1]), 3.0)
        after = classify_pairs(np.array([5.0, 5.0, 0.1, 0.1]), 3.0)
        assert (before.nn, before.on, before.oo) == (0.0, 1.0, 0.0)
        assert (after.nn, after.on, after.oo) == (0.5, 0.0, 0.5)

    def test_gaussian_oo_rare(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(1_000_000)
        ps = classify_pairs(v, 3.0 * v.std())
        assert ps.oo < 1e-4

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            classify_pairs(np.array([1.0]), 0.0)

    def test_empty(self):
        with pytest.raises(EmptyTensor):
            classify_pairs(np.zeros((0,)), 3.0)


class TestQuantMse:
    def test_on_grid_is_zero(self):
        s = 0.77
        v = s * np.array([1.0, 2.0, -3.0, 0.0])
        assert quant_mse(v, QuantConfig(scale=s)) == 0.0

    def test_half_step_example(self):
        s = 2.0
        v = np.array([0.5 * s, 0.0, 0.0, 0.0])
        assert quant_mse(v, QuantConfig(scale=s)) == 0.0625 * s * s

    def test_matches_round_trip(self):
        rng = np.random.default_rng(5)
        v = rng.normal(0, 2, 101)
        cfg = QuantConfig(scale=0.5)
        restored = decode_tensor(encode_tensor(v, cfg))
        assert quant_mse(v, cfg) == np.mean((v - restored) ** 2)

    def test_outliers_lower_mse_than_clipping(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal(4096)
        v[:4] = [20.0, -25.0, 30.0, 22.0]
        s = 3 * v.std() / 7
        assert quant_mse(v, QuantConfig(scale=s)) < clipped_int_mse(v, NormalDType.INT4, s)


class TestClippedBaseline:
    def test_on_grid_is_zero(self):
        v = 0.3 * np.array([-7.0, 1.0, 6.0])
        assert clipped_int_mse(v, NormalDType.INT4, 0.3) == 0.0

    def test_clipping_error(self):
        # 20 clamps to 7 at scale 1: squared error 169
        v = np.array([20.0, 0.0])
        assert clipped_int_mse(v, NormalDType.INT4, 1.0) == pytest.approx(169 / 2)

    def test_tie_rounds_away(self):
        assert clipped_int_mse(np.array([0.5]), NormalDType.INT4, 1.0) == 0.25


class TestCandidateScales:
    def test_steps_one_is_initial_scale(self):
        assert _candidate_scales(1.7, 0.25, 4.0, 1) == [1.7]

    def test_initial_scale_always_present(self):
        cands = _candidate_scales(1.0, 0.25, 4.0, 64)
        assert 1.0 in cands
        assert len(cands) in (64, 65)
        assert cands == sorted(cands)

    def test_window_edges(self):
        cands = _candidate_scales(2.0, 0.5, 2.0, 8)
        assert cands[0] == pytest.approx(1.0)
        assert cands[-1] == pytest.approx(4.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            _candidate_scales(1.0, 0.25, 4.0, 0)
        with pytest.raises(ValueError):
            _candidate_scales(1.0, 4.0, 0.25, 8)

    def test_argmin_tie_takes_smaller(self):
        scale, mse = _argmin_mse([1.0, 2.0, 3.0], lambda s: 5.0)
        assert (scale, mse) == (1.0, 5.0)


class TestSearchScale:
    def test_beats_initial_scale(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            v = rng.normal(0, rng.uniform(0.5, 3), 512)
            r = search_scale(v, NormalDType.INT4)
            m0 = quant_mse(v, QuantConfig(scale=r.initial_scale))
            assert r.mse <= m0

    def test_reported_mse_reproducible(self):
        rng = np.random.default_rng(8)
        v = rng.normal(0, 1, 300)
        r = search_scale(v, NormalDType.INT4)
        assert quant_mse(v, QuantConfig(scale=r.scale)) == r.mse

    def test_minimum_over_candidates(self):
        rng = np.random.default_rng(9)
        v = rng.normal(0, 1, 256)
        r = search_scale(v, NormalDType.INT4, steps=16)
        cands = _candidate_scales(r.initial_scale, 0.25, 4.0, 16)
        assert len(cands) == r.candidates_evaluated
        assert all(quant_mse(v, QuantConfig(scale=s)) >= r.mse for s in cands)

    def test_exact_grid_returns_zero_mse(self):
        # two ±7 spikes among 16 zeros give sigma = 7/3, so the initial
        # scale is exactly 1.0 and the tensor sits on that grid
        v = np.array([7.0, -7.0] + [0.0] * 16)
        r = search_scale(v, NormalDType.INT4)
        assert r.initial_scale == pytest.approx(1.0)
        assert r.mse == 0.0

    def test_steps_one_returns_initial(self):
        rng = np.random.default_rng(10)
        v = rng.normal(0, 1, 100)
        r = search_scale(v, NormalDType.INT4, steps=1)
        assert r.scale == r.initial_scale
        assert r.candidates_evaluated == 1

    def test_constant_tensor_fallback(self):
        r = search_scale(np.full(9, 14.0), NormalDType.INT4)
        assert r.scale == 2.0  # max_abs / max_magnitude
        assert r.mse == 0.0
        assert r.candidates_evaluated == 1

    def test_all_zero_fallback(self):
        r = search_scale(np.zeros(5), NormalDType.INT4)
        assert r.scale == 1.0
        assert r.mse == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        v = rng.normal(0, 1, 200)
        assert search_scale(v, NormalDType.INT4) == search_scale(v, NormalDType.INT4)

    def test_empty(self):
        with pytest.raises(EmptyTensor):
            search_scale(np.zeros((0,)), NormalDType.INT4)

    @pytest.mark.parametrize("dtype", list(NormalDType))
    def test_other_dtypes(self, dtype):
        rng = np.random.default_rng(12)
        v = rng.normal(0, 2, 256)
        r = search_scale(v, dtype)
        assert r.mse <= quant_mse(
            v, QuantConfig(dtype=dtype, scale=r.initial_scale)
        )

    def test_outlier_preservation_beats_clipping(self):
        # with heavy outliers the pair codec wins over int4 clipping at
        # each method's own searched scale
        rng = np.random.default_rng(13)
        for _ in range(5):
            v = rng.standard_normal(4096)
            idx = rng.integers(0, v.size, 4)
            v[idx] = 20.0 * rng.choice([-1.0, 1.0], 4)
            paired = search_scale(v, NormalDType.INT4)
            clipped = search_scale_clipped(v, NormalDType.INT4)
            assert paired.mse < clipped.mse


class TestSearchScaleClipped:
    def test_beats_initial(self):
        rng = np.random.default_rng(14)
        v = rng.normal(0, 1, 500)
        r = search_scale_clipped(v, NormalDType.INT4)
        assert r.mse <= clipped_int_mse(v, NormalDType.INT4, r.initial_scale)
        assert clipped_int_mse(v, NormalDType.INT4, r.scale) == r.mse

    def test_same_initial_rule(self):
        rng = np.random.default_rng(15)
        v = rng.normal(0, 1, 500)
        a = search_scale(v, NormalDType.INT4)
        b = search_scale_clipped(v, NormalDType.INT4)
        assert a.initial_scale == b.initial_scale
