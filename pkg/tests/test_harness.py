import math

import numpy as np
import pytest

from wasn_postfilter.harness import (ConfigError, ExperimentConfig, ReverbItem,
                                     Source, align, mix_at_snr, run_grid,
                                     wav_name, with_overrides)
from wasn_postfilter.metrics import SYSTEMS, read_rows
from wasn_postfilter.synth import babble, speech_like
from wasn_postfilter.transform import SignalBuffer, write_wav


def _db(p, q):
    return 10 * np.log10(np.mean(p**2) / np.mean(q**2))


@pytest.fixture(scope="module")
def short_source():
    clean = speech_like(0.8, seed=21)
    noise = babble(3.0, seed=22, talkers=3)
    return Source("clip0", clean, clean, clean, noise, noise)


def _cfg(tmp_path, **kw):
    base = dict(snr_b_grid=(-5.0,), bitrates=(32000,), output_dir=str(tmp_path), seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestMix:
    @pytest.mark.parametrize("target", [0.0, 40.0, -5.0])
    def test_target_snr(self, speech, noise, target):
        mix = mix_at_snr(speech, noise, target)
        assert _db(mix.speech.samples, mix.noise.samples) == pytest.approx(target, abs=0.01)
        np.testing.assert_allclose(mix.noisy.samples, speech.samples + mix.noise.samples)

    def test_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = SignalBuffer(rng.standard_normal(800) * rng.uniform(0.01, 1), 16000)
            n = SignalBuffer(rng.standard_t(4, 2000), 16000)
            target = rng.uniform(-10, 40)
            mix = mix_at_snr(x, n, target, int(rng.integers(0, 1000)))
            assert _db(x.samples, mix.noisy.samples - x.samples) == pytest.approx(target, abs=0.01)

    def test_short_noise_is_looped(self, speech):
        short = SignalBuffer(np.random.default_rng(1).standard_normal(4000), 16000)
        mix = mix_at_snr(speech, short, 10.0)
        assert mix.looped and len(mix.noise) == len(speech)
        assert not mix_at_snr(speech, babble(2.0, seed=3), 10.0).looped

    def test_silent_inputs(self, speech):
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(SignalBuffer(np.zeros(100), 16000), speech, 0.0)
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(speech, SignalBuffer(np.zeros(100), 16000), 0.0)


class TestAlign:
    def test_zero_delay_identity(self, rng):
        x, y = rng.standard_normal(100), rng.standard_normal(120)
        a, b = align([x, y], [0, 0])
        np.testing.assert_array_equal(a, x)
        np.testing.assert_array_equal(b, y[:100])

    def test_delay_and_back(self, rng):
        x = rng.standard_normal(200)
        (fwd,) = align([x], [7])
        (back,) = align([fwd], [-7])
        np.testing.assert_array_equal(back[7:193], x[7:193])

    def test_correlation_peak_at_zero_lag(self, rng):
        src = rng.standard_normal(3000)
        late = np.concatenate([np.zeros(25), src])[:3000]
        a, b = align([src, late], [0, 25])
        xc = np.correlate(a, b, mode="full")
        assert np.argmax(xc) - (len(a) - 1) == 0

    def test_delay_too_long(self, rng):
        with pytest.raises(ValueError, match="delay exceeds signal length"):
            align([rng.standard_normal(10)], [10])

    def test_non_integer_delay(self, rng):
        with pytest.raises(ValueError):
            align([rng.standard_normal(10)], [1.5])


class TestConfig:
    def test_requires_inputs(self):
        with pytest.raises(ConfigError, match="clean_wavs"):
            ExperimentConfig().validate()

    def test_missing_files(self, tmp_path):
        cfg = ExperimentConfig(clean_wavs=(str(tmp_path / "x.wav"),),
                               noise_wavs=(str(tmp_path / "n.wav"),))
        with pytest.raises(ConfigError, match="missing input files"):
            cfg.validate()

    @pytest.mark.parametrize("field, value", [
        ("snr_b_grid", ()), ("split", 1.0), ("delay_samples", (0,)),
        ("grid_n", 1), ("variance_mode", "magic")])
    def test_bad_values(self, tmp_path, field, value):
        wav = tmp_path / "a.wav"
        write_wav(wav, SignalBuffer(np.ones(10), 16000))
        cfg = ExperimentConfig(clean_wavs=(str(wav),), noise_wavs=(str(wav),))
        cfg.validate()
        with pytest.raises(ConfigError):
            with_overrides(cfg, **{field: value}).validate()

    def test_reverb_items_need_noise(self, tmp_path):
        wav = tmp_path / "a.wav"
        write_wav(wav, SignalBuffer(np.ones(10), 16000))
        item = ReverbItem("room", 0.3, str(wav), str(wav), str(wav))
        with pytest.raises(ConfigError, match="noise"):
            ExperimentConfig(reverb_items=(item,)).validate()

    def test_overrides_skip_none(self):
        cfg = with_overrides(ExperimentConfig(), seed=None, grid_n=50)
        assert cfg.seed == 0 and cfg.grid_n == 50


def test_wav_name():
    assert wav_name("clip0", -5.0, 32000.0, "mc") == "clip0__snrB-5dB__R32k__mc.wav"
    assert wav_name("a", 12.5, 24000, "bl_b") == "a__snrB12.5dB__R24k__bl_b.wav"


class TestRunGrid:
    def test_single_point(self, tmp_path, short_source):
        rows = run_grid(_cfg(tmp_path), [short_source])
        assert len(rows) == 1
        row = rows[0]
        assert row.status == "ok"
        assert set(row.psnr) == set(SYSTEMS)
        assert all(math.isfinite(v) for v in row.psnr.values())
        assert len(row.differentials) == 3
        # the multidevice estimate beats the noisy full-rate channel at -5 dB
        assert row.differentials["rho_mc_bl_b"] > 0
        wavs = sorted(p.name for p in tmp_path.glob("*.wav"))
        assert wavs == sorted(wav_name("clip0", -5.0, 32000.0, s) for s in SYSTEMS)
        assert read_rows(tmp_path / "scores.csv")[0].psnr == pytest.approx(row.psnr)

    def test_deterministic_csv(self, tmp_path, short_source):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_grid(_cfg(out, dither=True, write_wavs=False, snr_b_grid=(-5.0, 10.0)),
                     [short_source])
        assert (a / "scores.csv").read_bytes() == (b / "scores.csv").read_bytes()

    def test_seed_changes_dither(self, tmp_path, short_source):
        rows = [run_grid(_cfg(tmp_path / str(s), dither=True, write_wavs=False, seed=s),
                         [short_source])[0] for s in (1, 2)]
        assert rows[0].psnr != rows[1].psnr

    def test_failed_point_does_not_stop_run(self, tmp_path, short_source):
        silent = Source("silent", SignalBuffer(np.zeros(8000), 16000),
                        SignalBuffer(np.zeros(8000), 16000),
                        SignalBuffer(np.zeros(8000), 16000),
                        short_source.noise_a, short_source.noise_b)
        rows = run_grid(_cfg(tmp_path, write_wavs=False), [silent, short_source])
        assert rows[0].status.startswith("failed:")
        assert all(math.isnan(v) for v in rows[0].psnr.values())
        assert rows[1].status == "ok"
        assert len(read_rows(tmp_path / "scores.csv")) == 2

    def test_clean_high_rate_channel_competitive(self, tmp_path, short_source):
        row = run_grid(_cfg(tmp_path, snr_b_grid=(40.0,), bitrates=(96000,),
                            write_wavs=False), [short_source])[0]
        assert row.psnr["bl_b"] >= row.psnr["decode"] - 1.0

    def test_blind_variances_run(self, tmp_path, short_source):
        row = run_grid(_cfg(tmp_path, variance_mode="blind", write_wavs=False),
                       [short_source])[0]
        assert row.status == "ok"

    def test_from_wav_files(self, tmp_path, short_source):
        write_wav(tmp_path / "c.wav", short_source.clean)
        write_wav(tmp_path / "n.wav", short_source.noise_b)
        cfg = _cfg(tmp_path / "out", clean_wavs=(str(tmp_path / "c.wav"),),
                   noise_wavs=(str(tmp_path / "n.wav"),), write_wavs=False,
                   delay_samples=(0, 3))
        rows = run_grid(cfg)
        assert rows[0].clip == "c" and rows[0].status == "ok"

    def test_reverb_items(self, tmp_path, short_source):
        for name, sig in [("dry", short_source.clean), ("a", short_source.speech_a),
                          ("b", short_source.speech_b), ("na", short_source.noise_a),
                          ("nb", short_source.noise_b)]:
            write_wav(tmp_path / f"{name}.wav", sig)
        item = ReverbItem("room", 0.5, *(str(tmp_path / f"{n}.wav") for n in
                                         ("dry", "a", "b", "na", "nb")))
        rows = run_grid(_cfg(tmp_path / "out", reverb_items=(item,), write_wavs=False))
        assert rows[0].alpha == 0.5 and rows[0].status == "ok"
