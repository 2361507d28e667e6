"""Integer pipeline tests: pair algebra, EDP accumulation, nibble
decomposition, and the packed matrix multiply against float references.

Every decoded value is a small integer times a power of two, so the f64
reference paths used here are exact and comparisons are bit-for-bit.
"""

import numpy as np
import pytest

from ovpq.codec import QuantConfig, decode_tensor_fields, encode_tensor
from ovpq.compute import (
    INT32_MAX,
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
from ovpq.formats import AbfloatConfig, ExpIntPair, NormalDType, decode_abfloat


class TestMulPair:
    def test_example(self):
        assert mul_pair(ExpIntPair(4, 3), ExpIntPair(0, 2)) == (4, 6)
        assert mul_pair(ExpIntPair(4, 3), ExpIntPair(0, 2)).value == 96

    def test_victim_annihilates(self):
        for p in [ExpIntPair(4, 3), ExpIntPair(0, -7), ExpIntPair(19, 15)]:
            assert mul_pair(p, ExpIntPair(0, 0)).value == 0

    def test_signed(self):
        assert mul_pair(ExpIntPair(2, 3), ExpIntPair(3, -2)) == (5, -6)
        assert mul_pair(ExpIntPair(2, 3), ExpIntPair(3, -2)).value == -192


class TestEdp:
    def test_all_victims(self):
        lanes = [ExpIntPair(0, 0)] * 16
        other = [ExpIntPair(4, 3)] * 16
        assert edp(lanes, other, AccResult(123)).value == 123

    def test_sixteen_sevens(self):
        lanes = [ExpIntPair(0, 7)] * 16
        assert edp(lanes, lanes).value == 784

    def test_matches_float_reference(self):
        rng = np.random.default_rng(0)
        cfg = QuantConfig()
        for _ in range(50):
            v1 = rng.uniform(-120, 120, 16)
            v2 = rng.uniform(-120, 120, 16)
            c1 = encode_tensor(v1, cfg)
            c2 = encode_tensor(v2, cfg)
            e1, i1 = decode_tensor_fields(c1)
            e2, i2 = decode_tensor_fields(c2)
            a = [ExpIntPair(int(e), int(i)) for e, i in zip(e1, i1)]
            b = [ExpIntPair(int(e), int(i)) for e, i in zip(e2, i2)]
            ref = float(np.dot(np.ldexp(i1.astype(float), e1), np.ldexp(i2.astype(float), e2)))
            assert float(edp(a, b).value) == ref

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            edp([ExpIntPair(0, 1)], [])

    def test_term_overflow_reports_lane(self):
        big = ExpIntPair(19, 15)  # 15 << 19 ≈ 7.9e6, squared overflows
        ok = ExpIntPair(0, 1)
        with pytest.raises(AccOverflow) as exc:
            edp([ok, big], [ok, big])
        assert exc.value.index == 1

    def test_sum_overflow_detected(self):
        # each term is 2^30; the second addition crosses 2^31 - 1
        t = ExpIntPair(15, 1)
        with pytest.raises(AccOverflow) as exc:
            edp([t, t], [t, t])
        assert exc.value.index == 1

    def test_acc_seed_validated(self):
        with pytest.raises(AccOverflow):
            AccResult(2**31)


class TestSplit8:
    def test_examples(self):
        assert split8(-100) == (-7, 12)
        assert split8(0) == (0, 0)
        assert split8(127) == (7, 15)

    def test_identity_all_256(self):
        for x in range(-128, 128):
            h, l = split8(x)
            assert (h << 4) + l == x
            assert -8 <= h <= 7
            assert 0 <= l <= 15

    def test_range(self):
        with pytest.raises(ValueError):
            split8(128)


class TestMul8Composed:
    def test_example(self):
        assert mul8_composed(-100, 57) == -5700

    def test_zero(self):
        for y in (-128, -1, 0, 5, 127):
            assert mul8_composed(0, y) == 0

    def test_boundary(self):
        assert mul8_composed(-128, -128) == 16384

    def test_sampled_grid(self):
        rng = np.random.default_rng(1)
        xs = rng.integers(-128, 128, 300)
        ys = rng.integers(-128, 128, 300)
        for x, y in zip(xs, ys):
            assert mul8_composed(int(x), int(y)) == int(x) * int(y)


class TestMul8Abfloat:
    CFG = AbfloatConfig(8, 4)

    def test_zero_codes(self):
        for code in (0x00, 0x80):
            assert mul8_abfloat(code, ExpIntPair(0, 77), self.CFG) == 0

    def test_low_nibble_zero_single_term(self):
        # integer 8 splits as (0, 8): the high term vanishes
        code = 0x08  # exponent field 1, mantissa 0 -> integer 8
        ez, iz = decode_abfloat(code, self.CFG)
        assert split8(iz)[0] == 0
        assert mul8_abfloat(code, ExpIntPair(0, 3), self.CFG) == iz * 3 << ez

    def test_all_codes_sampled_partners(self):
        rng = np.random.default_rng(2)
        partners = [int(y) for y in rng.integers(-128, 128, 16)]
        for code in range(256):
            ez, iz = decode_abfloat(code, self.CFG, strict=False)
            for y in partners:
                got = mul8_abfloat(code, ExpIntPair(0, y), self.CFG)
                assert got == (iz * y) << ez

    def test_partner_with_exponent(self):
        code = 0x2B  # field 5, mantissa 3 -> <9, 11>
        ez, iz = decode_abfloat(code, self.CFG)
        got = mul8_abfloat(code, ExpIntPair(3, -5), self.CFG)
        assert got == (iz * -5) << (ez + 3)

    def test_width4_rejected(self):
        with pytest.raises(ValueError):
            mul8_abfloat(0b0101, ExpIntPair(0, 1), AbfloatConfig(4, 2))

    def test_clip_boundary_products_fit(self):
        # two clipped-maximum outliers multiply to exactly 2^30 < int32 max
        cfg = AbfloatConfig(8, 4)
        top = max(c for c in range(128) if cfg.is_emittable(c))
        ez, iz = decode_abfloat(top, cfg)
        assert iz << ez == 2**15
        assert mul8_abfloat(top, ExpIntPair(ez, iz), cfg) == 2**30
        assert 2**30 <= INT32_MAX


class TestMatmulPacked:
    def grid_of(self, c):
        e, i = decode_tensor_fields(c)
        return np.ldexp(i.astype(np.float64), e).reshape(c.shape)

    def quantized(self, rng, shape, scale=None, dtype=NormalDType.INT4):
        v = rng.standard_normal(shape)
        if scale is None:
            from ovpq.quantizer import search_scale

            scale = search_scale(v, dtype).scale
        return encode_tensor(v, QuantConfig(dtype=dtype, scale=scale))

    def test_single_outlier_row_example(self):
        cfg = QuantConfig()
        a = encode_tensor(np.array([[48.0, 0.0]]), cfg)
        b_t = encode_tensor(np.array([[2.0, 3.0]]), cfg)
        assert matmul_packed(a, b_t).tolist() == [[96.0]]

    def test_identity_on_grid(self):
        cfg = QuantConfig()
        eye = encode_tensor(np.eye(6), cfg)
        rng = np.random.default_rng(3)
        x_t = encode_tensor(rng.integers(-7, 8, (4, 6)).astype(float), cfg)
        got = matmul_packed(eye, x_t)
        assert np.array_equal(got, self.grid_of(x_t).T)

    def test_matches_reference_bit_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            a = self.quantized(rng, (16, 32))
            b_t = self.quantized(rng, (12, 32))
            got = matmul_packed(a, b_t)
            ref = matmul_reference(a, b_t)
            assert np.array_equal(got, ref)

    def test_matches_numpy_dot_oracle(self):
        rng = np.random.default_rng(5)
        a = self.quantized(rng, (8, 16))
        b_t = self.quantized(rng, (8, 16))
        oracle = (a.scale * b_t.scale) * (self.grid_of(a) @ self.grid_of(b_t).T)
        assert np.array_equal(matmul_packed(a, b_t), oracle)

    def test_int8_path(self):
        rng = np.random.default_rng(6)
        a = self.quantized(rng, (6, 8), dtype=NormalDType.INT8)
        b_t = self.quantized(rng, (5, 8), dtype=NormalDType.INT8)
        assert np.array_equal(matmul_packed(a, b_t), matmul_reference(a, b_t))

    def test_matches_scalar_edp(self):
        rng = np.random.default_rng(7)
        a = self.quantized(rng, (4, 6), scale=0.5)
        b_t = self.quantized(rng, (3, 6), scale=0.25)
        ea, ia = (x.reshape(4, 6) for x in decode_tensor_fields(a))
        eb, ib = (x.reshape(3, 6) for x in decode_tensor_fields(b_t))
        got = matmul_packed(a, b_t)
        for i in range(4):
            for j in range(3):
                lanes_a = [ExpIntPair(int(e), int(v)) for e, v in zip(ea[i], ia[i])]
                lanes_b = [ExpIntPair(int(e), int(v)) for e, v in zip(eb[j], ib[j])]
                expect = a.scale * b_t.scale * edp(lanes_a, lanes_b).value
                assert got[i, j] == expect

    def test_shape_checks(self):
        cfg = QuantConfig()
        m22 = encode_tensor(np.zeros((2, 2)), cfg)
        m24 = encode_tensor(np.zeros((2, 4)), cfg)
        v2 = encode_tensor(np.zeros(2), cfg)
        m23 = encode_tensor(np.zeros((2, 3)), cfg)
        with pytest.raises(ShapeMismatch):
            matmul_packed(m22, m24)
        with pytest.raises(ShapeMismatch):
            matmul_packed(m22, v2)
        with pytest.raises(ShapeMismatch):
            matmul_packed(m23, m23)  # odd inner dimension

    def test_zero_inner_dim(self):
        cfg = QuantConfig()
        a = encode_tensor(np.zeros((3, 0)), cfg)
        b_t = encode_tensor(np.zeros((2, 0)), cfg)
        assert matmul_packed(a, b_t).tolist() == [[0.0, 0.0]] * 3

    def test_overflow_reports_coordinates(self):
        # unclipped 8-bit outliers make a single product exceed int32
        cfg = QuantConfig(
            dtype=NormalDType.INT8,
            abf=AbfloatConfig(8, 4, clip=False),
            scale=1.0,
        )
        v = np.array([[1.0, 6.0e6], [1.0, 1.0]])
        a = encode_tensor(v, cfg)
        with pytest.raises(AccOverflow) as exc:
            matmul_packed(a, a)
        i, j, lane = exc.value.index
        assert (i, j, lane) == (0, 0, 1)

    def test_sum_overflow_detected(self):
        # all elements at the clip boundary: outlier-outlier pairs prune to
        # [2^15, 0, 2^15, 0], every surviving product is exactly 2^30, and
        # the second surviving lane pushes the running sum past int32
        cfg = QuantConfig(dtype=NormalDType.INT8, scale=1.0)
        v = np.full((2, 4), 2.0**15)
        a = encode_tensor(v, cfg)
        with pytest.raises(AccOverflow) as exc:
            matmul_packed(a, a)
        assert exc.value.index == (0, 0, 2)

    def test_realistic_clipped_int8_matches_reference(self):
        rng = np.random.default_rng(8)
        cfg = QuantConfig(dtype=NormalDType.INT8, scale=1.0)
        v = rng.normal(0, 100, (4, 8))
        v[0, 3] = 700.0  # a genuine outlier, well under the clip
        a = encode_tensor(v, cfg)
        got = matmul_packed(a, a)
        assert np.array_equal(got, matmul_reference(a, a))
