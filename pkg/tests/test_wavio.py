import numpy as np
import pytest
from scipy.io import wavfile

from fullsub.errors import DecodeError
from fullsub.wavio import read_wav, to_pcm16, write_wav


def test_float32_round_trip_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "f.wav", x, fmt="float32")
    y, rate = read_wav(tmp_path / "f.wav")
    assert rate == 16000
    np.testing.assert_array_equal(x, y)


def test_pcm16_round_trip_bound(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, 5000)
    write_wav(tmp_path / "p.wav", x)
    y, _ = read_wav(tmp_path / "p.wav")
    assert np.max(np.abs(x - y)) <= 1 / 65536


def test_pcm16_exact_inverse(tmp_path):
    codes = np.arange(-32768, 32768, 97, dtype=np.int16)
    wavfile.write(tmp_path / "c.wav", 16000, codes)
    y, _ = read_wav(tmp_path / "c.wav")
    np.testing.assert_array_equal(to_pcm16(y), codes)


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(to_pcm16(np.array([0.5, -0.5, 1.5, -1.5]) / 32768), [1, -1, 2, -2])
    np.testing.assert_array_equal(to_pcm16(np.array([2.0, -2.0])), [32767, -32768])


def test_stereo_rejected(tmp_path):
    wavfile.write(tmp_path / "s.wav", 16000, np.zeros((10, 2), np.int16))
    with pytest.raises(DecodeError, match="s.wav"):
        read_wav(tmp_path / "s.wav")


def test_wrong_rate_rejected(tmp_path):
    wavfile.write(tmp_path / "r.wav", 44100, np.zeros(10, np.int16))
    with pytest.raises(DecodeError, match="16000"):
        read_wav(tmp_path / "r.wav")


def test_unsupported_codec(tmp_path):
    wavfile.write(tmp_path / "i.wav", 16000, np.zeros(10, np.int32))
    with pytest.raises(DecodeError):
        read_wav(tmp_path / "i.wav")


def test_garbage_file(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(DecodeError, match="g.wav"):
        read_wav(tmp_path / "g.wav")
