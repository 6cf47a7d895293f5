import numpy as np
import pytest

from wasn_postfilter.cli import load_config, main
from wasn_postfilter.harness import ConfigError
from wasn_postfilter.metrics import read_rows
from wasn_postfilter.synth import babble, speech_like
from wasn_postfilter.transform import SignalBuffer, read_wav, write_wav


@pytest.fixture(scope="module")
def wavs(tmp_path_factory):
    root = tmp_path_factory.mktemp("wavs")
    write_wav(root / "clean.wav", speech_like(0.6, seed=31))
    write_wav(root / "noise.wav", babble(2.0, seed=32, talkers=3))
    write_wav(root / "silent.wav", SignalBuffer(np.zeros(8000), 16000))
    return root


def _ini(path, body):
    path.write_text("[experiment]\n" + body)
    return path


class TestCodecCommands:
    def test_encode_decode_enhance_evaluate(self, wavs, tmp_path, capsys):
        a, b = tmp_path / "a.qps", tmp_path / "b.qps"
        assert main(["-q", "encode", str(wavs / "clean.wav"), str(a), "--bitrate", "32000"]) == 0
        assert main(["-q", "encode", str(wavs / "clean.wav"), str(b), "--bitrate", "16000",
                     "--dither-seed", "4"]) == 0
        assert main(["-q", "decode", str(a), str(tmp_path / "a.wav")]) == 0
        decoded = read_wav(tmp_path / "a.wav")
        assert len(decoded) == len(read_wav(wavs / "clean.wav"))
        assert main(["-q", "enhance", str(a), str(b), "-o", str(tmp_path / "e.wav")]) == 0
        assert len(read_wav(tmp_path / "e.wav")) == len(decoded)
        capsys.readouterr()
        assert main(["-q", "evaluate", str(wavs / "clean.wav"), str(tmp_path / "a.wav"),
                     "--stream", str(a)]) == 0
        out = capsys.readouterr().out.strip().split("\t")
        assert out[0].endswith("a.wav") and float(out[1]) > 0

    def test_corrupt_stream(self, tmp_path):
        bad = tmp_path / "bad.qps"
        bad.write_bytes(b"nonsense")
        assert main(["-q", "decode", str(bad), str(tmp_path / "x.wav")]) == 1

    def test_missing_input(self, tmp_path):
        assert main(["-q", "encode", str(tmp_path / "nope.wav"), str(tmp_path / "o.qps"),
                     "--bitrate", "8000"]) == 1

    def test_evaluate_needs_inputs(self):
        assert main(["-q", "evaluate"]) == 1


class TestConfigFile:
    def test_parse_and_resolve_paths(self, tmp_path):
        path = _ini(tmp_path / "e.ini", "clean_wavs = a.wav, sub/b.wav\nnoise_wavs = n.wav\n"
                    "snr_b_grid = -5, 5\nbitrates = 16000\ndither = yes\nseed = 9\n"
                    "delay_samples = 0, 4\noutput_dir = res\n"
                    "\n[reverb:room1]\nalpha = 0.3\nclean = d.wav\nspeech_a = a.wav\n"
                    "speech_b = b.wav\n")
        cfg = load_config(path)
        assert cfg.clean_wavs == (str(tmp_path / "a.wav"), str(tmp_path / "sub/b.wav"))
        assert cfg.snr_b_grid == (-5.0, 5.0) and cfg.bitrates == (16000.0,)
        assert cfg.dither is True and cfg.seed == 9 and cfg.delay_samples == (0, 4)
        assert cfg.output_dir == str(tmp_path / "res")
        (item,) = cfg.reverb_items
        assert item.name == "room1" and item.alpha == 0.3 and item.noise_a is None

    @pytest.mark.parametrize("body", ["colour = red\n", "seed = many\n"])
    def test_bad_keys_and_values(self, tmp_path, body):
        with pytest.raises(ConfigError):
            load_config(_ini(tmp_path / "e.ini", body))

    def test_missing_section(self, tmp_path):
        (tmp_path / "e.ini").write_text("[other]\nx = 1\n")
        with pytest.raises(ConfigError, match="experiment"):
            load_config(tmp_path / "e.ini")


class TestGridCommand:
    def test_flags_override_file(self, wavs, tmp_path):
        ini = _ini(tmp_path / "e.ini", f"clean_wavs = {wavs / 'clean.wav'}\n"
                   f"noise_wavs = {wavs / 'noise.wav'}\nsnr_b_grid = 0, 10, 20\n"
                   "bitrates = 16000\noutput_dir = first\n")
        out = tmp_path / "second"
        code = main(["-q", "grid", "--config", str(ini), "--snr-b-grid", "-5",
                     "--output-dir", str(out), "--no-write-wavs"])
        assert code == 0
        rows = read_rows(out / "scores.csv")
        assert [r.snr_b for r in rows] == [-5.0]
        assert not (tmp_path / "first").exists()
        assert not list(out.glob("*.wav"))

    def test_config_error_exit_code(self, tmp_path):
        assert main(["-q", "grid", "--config", str(tmp_path / "missing.ini")]) == 1
        assert main(["-q", "grid", "--clean-wavs", str(tmp_path / "x.wav"),
                     "--noise-wavs", str(tmp_path / "y.wav")]) == 1

    def test_partial_failure_exit_code(self, wavs, tmp_path):
        code = main(["-q", "grid", "--clean-wavs", str(wavs / "silent.wav"), str(wavs / "clean.wav"),
                     "--noise-wavs", str(wavs / "noise.wav"), "--snr-b-grid", "0",
                     "--bitrates", "16000", "--output-dir", str(tmp_path), "--no-write-wavs"])
        assert code == 2
        rows = read_rows(tmp_path / "scores.csv")
        assert [r.status == "ok" for r in rows] == [False, True]

    def test_evaluate_summary(self, wavs, tmp_path, capsys):
        main(["-q", "grid", "--clean-wavs", str(wavs / "clean.wav"), "--noise-wavs",
              str(wavs / "noise.wav"), "--snr-b-grid", "0", "--bitrates", "16000",
              "--output-dir", str(tmp_path), "--no-write-wavs"])
        capsys.readouterr()
        assert main(["-q", "evaluate", "--scores", str(tmp_path / "scores.csv")]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("snr_b=0 R=16000") and "psnr_mc=" in line
