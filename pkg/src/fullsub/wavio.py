"""16 kHz mono WAV I/O (PCM16 or 32-bit float)."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from fullsub.errors import DecodeError

SAMPLE_RATE = 16000


def read_wav(path, sample_rate: int | None = SAMPLE_RATE) -> tuple[np.ndarray, int]:
    """Samples as float64 in [-1, 1) plus the file's rate.

    PCM16 is scaled by 1/32768; float files are returned as stored.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError, EOFError, wave.Error) as e:
        raise DecodeError(f"{path}: cannot decode WAV ({e})") from e
    if data.ndim != 1:
        raise DecodeError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if sample_rate is not None and rate != sample_rate:
        raise DecodeError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0, rate
    if data.dtype == np.float32:
        return data.astype(np.float64), rate
    raise DecodeError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")


def to_pcm16(x) -> np.ndarray:
    """Quantize with round-half-away-from-zero, clipping to the int16 range."""
    y = np.asarray(x, np.float64) * 32768.0
    y = np.sign(y) * np.floor(np.abs(y) + 0.5)
    return np.clip(y, -32768, 32767).astype(np.int16)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE, fmt: str = "pcm16") -> None:
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise ValueError("only mono signals can be written")
    if fmt == "pcm16":
        data = to_pcm16(samples)
    elif fmt == "float32":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(Path(path), sample_rate, data)
