import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wasn_postfilter import quantcodec as qc
from wasn_postfilter.quantcodec import (BinLimits, QuantizedFrame, RateConfig,
                                        allocate_bits, choose_step, decode,
                                        decode_frames, dequantize, deserialize,
                                        dither_offsets, encode, encode_frame,
                                        quantize, read_stream, serialize,
                                        side_info_sigma, write_stream)

GOLDEN_FRAME = np.array([0.9, -1.7, 0.05, 2.5, -0.4, 0.0, 1.1, -3.0])
GOLDEN_BITS = np.array([3, 3, 2, 2, 1, 1, 0, 0])
# hand-checked: sigma = float16(rms) = 1.59375, scale 8 sigma = 12.75
GOLDEN_HEX = ("5150463108000500000000000000008029" "40ffffffffffffffff"
              "0303020201010000" "0100ffff000001000000000000000000")


class TestAllocation:
    def test_split_rates(self):
        rate = RateConfig(32000)
        assert rate.bitrate_a == 8000 and rate.bitrate_b == 24000
        assert rate.bits_a().sum() == 128
        assert rate.bits_b().sum() == 384
        assert rate.bits_full().sum() == 512

    def test_leftover_to_low_bins(self):
        bits = allocate_bits(72000, 62.5, 256)  # 1152 bits per frame
        assert bits.sum() == 1152
        assert np.all(bits[:128] == 5) and np.all(bits[128:] == 4)

    @given(st.floats(0, 2e5), st.sampled_from([8, 64, 256]))
    def test_budget_respected(self, bitrate, K):
        bits = allocate_bits(bitrate, 62.5, K)
        assert bits.sum() <= bitrate / 62.5 + 1e-6
        assert bits.max() - bits.min() <= 1
        assert np.all(np.diff(bits) <= 0)

    def test_bad_split(self):
        with pytest.raises(ValueError):
            RateConfig(32000, split=1.5)


class TestQuantizer:
    def test_midtread_levels(self):
        q = quantize(np.array([-0.74, -0.26, -0.25, 0.0, 0.24, 0.25, 0.76]), 0.5)
        np.testing.assert_array_equal(q, [-1, -1, 0, 0, 0, 1, 2])

    def test_limits_bracket_reconstruction(self):
        recon, lo, up = dequantize(np.array([-2, 0, 3]), 0.5)
        np.testing.assert_allclose(recon, [-1.0, 0.0, 1.5])
        np.testing.assert_allclose(up - lo, 0.5)
        np.testing.assert_allclose((lo + up) / 2, recon)

    def test_saturation_uses_outer_limit(self):
        q = quantize(np.array([10.0, -10.0, 0.3]), 1.0, max_index=2)
        _, lo, up = dequantize(q, 1.0, 2, outer=8.0)
        np.testing.assert_array_equal(q, [2, -2, 0])
        assert up[0] == 8.0 and lo[1] == -8.0
        assert lo[0] == 1.5 and up[1] == -1.5

    def test_step_floor(self):
        assert choose_step(0.0, 4) == qc.STEP_FLOOR
        assert choose_step(1.0, 3) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            choose_step(-1.0, 2)

    def test_side_info_is_half_precision(self):
        sigma = side_info_sigma(np.full(4, 1.2345))
        assert sigma == float(np.float16(1.2345))

    def test_side_info_overflow(self):
        with pytest.raises(ValueError, match="side-info range"):
            side_info_sigma(np.full(4, 1e6))


class TestDither:
    def test_range_and_mean(self):
        step = np.full(20000, 2.0)
        d = dither_offsets(3, 0, step)
        assert np.all(d > -1.0) and np.all(d <= 1.0)
        assert abs(d.mean()) < 0.03

    def test_deterministic_per_frame(self):
        step = np.ones(16)
        np.testing.assert_array_equal(dither_offsets(9, 4, step), dither_offsets(9, 4, step))
        assert not np.array_equal(dither_offsets(9, 4, step), dither_offsets(9, 5, step))


class TestFrameCodec:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), b=st.integers(0, 8),
           dither=st.booleans(), scale=st.floats(1e-6, 1e3))
    def test_containment(self, seed, b, dither, scale):
        rng = np.random.default_rng(seed)
        y = scale * rng.standard_t(3, 64)
        bits = np.full(64, b)
        bits[: seed % 64] += 1
        qf = encode_frame(y, bits, seed if dither else None, seed % 1000)
        recon, lim = decode(qf)
        assert np.all(lim.lower <= y) and np.all(y <= lim.upper)
        assert np.all(lim.lower <= recon) and np.all(recon <= lim.upper)
        assert np.all(recon[~qf.transmitted] == 0)

    def test_undithered_error_within_half_step(self, rng):
        y = rng.standard_normal(256)
        qf = encode_frame(y, np.full(256, 6))
        recon, _ = decode(qf)
        inner = np.abs(qf.indices) < qf.max_index
        assert np.all(np.abs(y - recon)[inner] <= qf.step[inner] / 2 * (1 + 1e-12))

    def test_spiky_frame_contained(self):
        # all energy in one bin: |y| = sqrt(K) * rms
        y = np.zeros(256)
        y[7] = -1.0
        for b in (0, 1, 4):
            _, lim = decode(encode_frame(y, np.full(256, b)))
            assert lim.lower[7] <= -1.0 <= lim.upper[7]

    def test_untransmitted_step_is_inf(self, rng):
        qf = encode_frame(rng.standard_normal(8), GOLDEN_BITS)
        assert np.all(np.isinf(qf.step[GOLDEN_BITS == 0]))
        assert np.all(np.isfinite(qf.step[GOLDEN_BITS > 0]))

    def test_dithered_encoding_is_deterministic(self, rng):
        y = rng.standard_normal((5, 32))
        bits = np.full(32, 3)
        assert encode(y, bits, 77) == encode(y, bits, 77)
        assert encode(y, bits, 77) != encode(y, bits, 78)

    def test_decode_frames_shapes(self, rng):
        frames = encode(rng.standard_normal((6, 16)), np.full(16, 2))
        recon, lim, step = decode_frames(frames)
        assert recon.shape == lim.lower.shape == step.shape == (6, 16)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            encode_frame(np.zeros(4), np.ones(5, dtype=int))

    def test_bin_limits_validated(self):
        with pytest.raises(ValueError):
            BinLimits(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


class TestSerialization:
    def test_golden_bytes(self):
        qf = encode_frame(GOLDEN_FRAME, GOLDEN_BITS, None, 5)
        assert serialize(qf).hex() == GOLDEN_HEX
        assert qf.sigma == 1.59375
        np.testing.assert_array_equal(qf.indices, [1, -1, 0, 1, 0, 0, 0, 0])

    def test_golden_decodes(self):
        qf = deserialize(bytes.fromhex(GOLDEN_HEX))
        assert qf.frame_index == 5 and qf.dither_seed is None
        recon, _ = decode(qf)
        np.testing.assert_allclose(recon, [1.59375, -1.59375, 0, 3.1875, 0, 0, 0, 0])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), dither=st.booleans(), index=st.integers(0, 2**32 - 1))
    def test_round_trip(self, seed, dither, index):
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 9, 32)
        qf = encode_frame(rng.standard_normal(32), bits, seed if dither else None, index)
        back = deserialize(serialize(qf))
        assert back == qf
        np.testing.assert_array_equal(decode(back)[0], decode(qf)[0])

    def test_bad_magic(self):
        data = bytearray(bytes.fromhex(GOLDEN_HEX))
        data[0] = ord("X")
        with pytest.raises(ValueError, match="corrupt stream"):
            deserialize(bytes(data))

    def test_truncated(self):
        with pytest.raises(ValueError, match="corrupt stream"):
            deserialize(bytes.fromhex(GOLDEN_HEX)[:-2])

    def test_index_out_of_range(self):
        qf = QuantizedFrame(np.array([5, 0]), 1.0, np.array([2, 2]))
        with pytest.raises(ValueError, match="corrupt stream"):
            deserialize(serialize(qf))
        with pytest.raises(ValueError, match="corrupt stream"):
            decode(qf)

    def test_stream_round_trip(self, tmp_path, rng):
        pf = rng.standard_normal((4, 16))
        env = rng.uniform(0.5, 2, (4, 16))
        frames = encode(pf, np.full(16, 3), 5)
        write_stream(tmp_path / "s.qps", frames, env, 16000, 50)
        back, env_back, rate, n = read_stream(tmp_path / "s.qps")
        assert back == frames
        np.testing.assert_array_equal(env_back, env)
        assert (rate, n) == (16000, 50)

    def test_stream_corrupt(self, tmp_path):
        path = tmp_path / "s.qps"
        path.write_bytes(b"QPS1\x00")
        with pytest.raises(ValueError, match="corrupt stream"):
            read_stream(path)


def test_bit_depth_limit():
    with pytest.raises(ValueError, match="bits per bin"):
        QuantizedFrame(np.zeros(2, dtype=int), 1.0, np.array([16, 0]))


class TestDocumentedCases:
    @pytest.mark.parametrize("y, index", [(0.4, 0), (0.6, 1), (-0.4, 0), (-0.6, -1)])
    def test_rounding(self, y, index):
        assert quantize(np.array([y]), 1.0)[0] == index

    def test_step_examples(self):
        assert choose_step(1.0, 3) == 1.0
        assert choose_step(1.0, 4) == 0.5

    def test_limit_examples(self):
        r, lo, up = dequantize(np.array([0, 3]), np.array([1.0, 0.5]))
        np.testing.assert_array_equal(r, [0.0, 1.5])
        np.testing.assert_array_equal(lo, [-0.5, 1.25])
        np.testing.assert_array_equal(up, [0.5, 1.75])

    def test_interior_width_is_step(self, rng):
        qf = encode_frame(rng.standard_normal(256), np.full(256, 4), 11)
        _, lim = decode(qf)
        inner = np.abs(qf.indices) < qf.max_index
        np.testing.assert_allclose(lim.width[inner], qf.step[inner], rtol=1e-12)

    def test_rate_monotonicity(self, rng):
        y = rng.standard_normal((40, 256))
        steps, errors = [], []
        for b in range(1, 8):
            frames = encode(y, np.full(256, b))
            recon, _, step = decode_frames(frames)
            steps.append(step[0, 0])
            errors.append(np.mean((recon - y) ** 2))
        np.testing.assert_allclose(np.array(steps[1:]) / steps[:-1], 0.5)
        assert np.all(np.diff(errors) <= 0)
