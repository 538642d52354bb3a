"""Desk-scale training data: synthetic sources, synthetic RIRs, SNR-controlled dynamic mixing.

The clean "speech" is a harmonic-tone generator (syllable-like voiced bursts
with a wandering f0 in [100, 300] Hz and amplitude modulation). Noise comes
from a small family of mostly stationary coloured processes. Everything is
driven by explicit seeds so an epoch can be regenerated bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.signal import fftconvolve, lfilter

from fullsub.dsp import StftConfig, magnitude, stft
from fullsub.errors import InvalidArgument
from fullsub.mask import CrmConfig, compress, compute_cirm

SNR_RANGE = (-5.0, 20.0)
REVERB_PROB = 0.75
# reverberation times of the two measured RIR collections, reproduced synthetically
T60_CHOICES = (0.16, 0.3, 0.36, 0.6, 0.61, 0.7)
NOISE_KINDS = ("white", "pink", "brown", "lowpass", "bandpass", "hum", "modulated")


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    reverberant: bool
    rir_t60: float | None = None
    seed: int = 0
    clean_index: int = -1
    noise_index: int = -1


@dataclass
class Mixture:
    speech: np.ndarray  # speech image (reverberant when spec.reverberant)
    noise: np.ndarray  # scaled noise actually added
    mixture: np.ndarray
    spec: MixSpec


@dataclass
class TrainingPair:
    noisy_mag: np.ndarray  # (T, F)
    target: np.ndarray  # (T, F, 2) compressed cIRM
    spec: MixSpec
    valid: np.ndarray = field(default=None)  # (T,) bool; None means all frames count
    mixture: Mixture | None = None


# --- sources -------------------------------------------------------------------


def harmonic_source(rng: np.random.Generator, n_samples: int, fs: int = 16000) -> np.ndarray:
    """Speech-like harmonic bursts separated by short pauses, peak-normalized to 0.5."""
    out = np.zeros(n_samples)
    pos = int(rng.uniform(0.0, 0.08) * fs)
    while pos < n_samples:
        dur = int(rng.uniform(0.12, 0.35) * fs)
        n = min(dur, n_samples - pos)
        t = np.arange(n) / fs
        f0_start, f0_end = rng.uniform(100.0, 300.0, 2)
        f0 = np.linspace(f0_start, f0_end, n) * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * t))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        formants = rng.uniform([300, 900, 2200], [900, 2200, 3500])
        burst = np.zeros(n)
        for k in range(1, int(0.45 * fs / max(f0_start, f0_end))):
            fk = k * f0
            gain = sum(np.exp(-0.5 * ((fk - fm) / 180.0) ** 2) for fm in formants) + 0.1 / k
            burst += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        env = np.sin(np.pi * np.arange(n) / max(n, 1)) ** 2
        env *= 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
        out[pos : pos + n] += rng.uniform(0.3, 1.0) * env * burst
        pos += dur + int(rng.uniform(0.03, 0.15) * fs)
    peak = np.max(np.abs(out))
    return out * (0.5 / peak) if peak > 0 else out


def noise_source(rng: np.random.Generator, n_samples: int, fs: int = 16000, kind: str | None = None) -> np.ndarray:
    """One of :data:`NOISE_KINDS`, unit RMS."""
    kind = kind or NOISE_KINDS[rng.integers(len(NOISE_KINDS))]
    w = rng.standard_normal(n_samples)
    if kind == "white":
        x = w
    elif kind == "pink":
        # Kellet-style 1/f approximation
        x = lfilter([0.049922035, -0.095993537, 0.050612699, -0.004408786], [1, -2.494956002, 2.017265875, -0.522189400], w)
    elif kind == "brown":
        x = lfilter([1.0], [1.0, -0.995], w)
    elif kind == "lowpass":
        a = rng.uniform(0.7, 0.95)
        x = lfilter([1 - a], [1, -a], w)
    elif kind == "bandpass":
        fc = rng.uniform(500, 4000)
        r = 0.97
        th = 2 * np.pi * fc / fs
        x = lfilter([1 - r], [1, -2 * r * np.cos(th), r * r], w)
    elif kind == "hum":
        t = np.arange(n_samples) / fs
        base = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * k * base * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 12))
        x = x + 0.3 * w
    elif kind == "modulated":
        t = np.arange(n_samples) / fs
        x = w * (1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t))
    else:
        raise InvalidArgument(f"unknown noise kind {kind!r}")
    return x / np.sqrt(np.mean(x * x))


def make_clean_set(count: int, seconds: float, fs: int = 16000, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [harmonic_source(rng, int(seconds * fs), fs) for _ in range(count)]


def make_noise_set(count: int, seconds: float, fs: int = 16000, seed: int = 1) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [noise_source(rng, int(seconds * fs), fs, NOISE_KINDS[k % len(NOISE_KINDS)]) for k in range(count)]


def load_manifest(path) -> list[np.ndarray]:
    """Read every waveform listed (one path per line, relative to the manifest)."""
    from fullsub.wavio import read_wav

    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            out.append(read_wav(p if p.is_absolute() else path.parent / p)[0])
    return out


# --- reverberation and mixing ----------------------------------------------------


def decay_rate(t60: float) -> float:
    """Amplitude decay constant: envelope exp(-rate * t) drops 60 dB in energy at t60."""
    return 3.0 * np.log(10.0) / t60


def decay_envelope(t60: float, fs: int, length: int) -> np.ndarray:
    return np.exp(-decay_rate(t60) * np.arange(length) / fs)


def synth_rir(t60: float, fs: int = 16000, length: int | None = None, seed: int = 0) -> np.ndarray:
    """Exponentially decaying white-noise impulse response with unit energy."""
    if t60 <= 0:
        raise InvalidArgument(f"t60 must be positive, got {t60}")
    if length is None:
        length = int(round(t60 * fs))
    if length < 1:
        raise InvalidArgument("RIR length must be >= 1 sample")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(length) * decay_envelope(t60, fs, length)
    return h / np.sqrt(np.sum(h * h))


def power(x) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def fit_length(noise: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Loop or crop ``noise`` to ``n`` samples starting at ``offset``."""
    idx = (offset + np.arange(n)) % len(noise)
    return noise[idx]


def mix_at_snr(speech, noise, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale ``noise`` so that ``10 log10(P_speech / P_noise) == snr_db``."""
    speech = np.asarray(speech, np.float64)
    noise = np.asarray(noise, np.float64)
    if len(noise) != len(speech):
        noise = fit_length(noise, len(speech))
    ps, pn = power(speech), power(noise)
    if ps == 0 or pn == 0:
        raise InvalidArgument("speech and noise must both have non-zero energy")
    gain = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    scaled = gain * noise
    return speech + scaled, scaled


def measured_snr(speech, noise) -> float:
    return 10.0 * np.log10(power(speech) / power(noise))


def mix_item(
    speech: np.ndarray,
    noise: np.ndarray,
    seed: int,
    fs: int = 16000,
    reverb_prob: float = REVERB_PROB,
    snr_range: tuple[float, float] = SNR_RANGE,
    t60_choices: Sequence[float] = T60_CHOICES,
    clean_index: int = -1,
    noise_index: int = -1,
    keep_tail: bool = True,
) -> Mixture:
    """One dynamically mixed example; all randomness comes from ``seed``.

    ``keep_tail=False`` crops the reverberant image to the dry length.
    """
    rng = np.random.default_rng(seed)
    reverberant = bool(rng.random() < reverb_prob)
    snr = float(rng.uniform(*snr_range))
    t60 = None
    image = np.asarray(speech, np.float64)
    if reverberant:
        t60 = float(t60_choices[rng.integers(len(t60_choices))])
        rir = synth_rir(t60, fs, seed=int(rng.integers(2**31)))
        image = fftconvolve(image, rir)
        if not keep_tail:
            image = image[: len(speech)]
    offset = int(rng.integers(len(noise)))
    noise = fit_length(np.asarray(noise, np.float64), len(image), offset)
    mixture, scaled = mix_at_snr(image, noise, snr)
    spec = MixSpec(snr, reverberant, t60, seed, clean_index, noise_index)
    return Mixture(image, scaled, mixture, spec)


def make_pair(mix: Mixture, stft_cfg: StftConfig, crm_cfg: CrmConfig | None = None) -> TrainingPair:
    X = stft(mix.mixture, stft_cfg)
    S = stft(mix.speech, stft_cfg)
    target = compress(compute_cirm(X, S, crm_cfg), crm_cfg)
    return TrainingPair(magnitude(X), target, mix.spec, None, mix)


def mix_stream(
    clean_set: Sequence[np.ndarray],
    noise_set: Sequence[np.ndarray],
    rng: np.random.Generator,
    count: int | None = None,
    fs: int = 16000,
    **mix_kwargs,
) -> Iterator[Mixture]:
    """Yield fresh mixtures, one per clean source unless ``count`` is given.

    Each item draws its own seed from ``rng`` up front, so the stream is
    reproducible regardless of how far it is consumed.
    """
    if not clean_set or not noise_set:
        raise InvalidArgument("clean and noise sets must be non-empty")
    n = len(clean_set) if count is None else count
    order = rng.permutation(n) % len(clean_set)
    noise_idx = rng.integers(len(noise_set), size=n)
    seeds = rng.integers(2**63 - 1, size=n)
    for k in range(n):
        ci, ni = int(order[k]), int(noise_idx[k])
        yield mix_item(clean_set[ci], noise_set[ni], int(seeds[k]), fs, clean_index=ci, noise_index=ni, **mix_kwargs)


def dynamic_mix_epoch(
    clean_set: Sequence[np.ndarray],
    noise_set: Sequence[np.ndarray],
    rng: np.random.Generator,
    stft_cfg: StftConfig | None = None,
    crm_cfg: CrmConfig | None = None,
    count: int | None = None,
    **mix_kwargs,
) -> Iterator[TrainingPair]:
    """:func:`mix_stream` turned into (magnitude, compressed cIRM) training pairs."""
    stft_cfg = stft_cfg or StftConfig()
    for mix in mix_stream(clean_set, noise_set, rng, count, stft_cfg.sample_rate, **mix_kwargs):
        yield make_pair(mix, stft_cfg, crm_cfg)


def chunk_sequences(noisy_mag, target, seq_len: int = 192) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Split aligned ``(T, F)`` / ``(T, F, 2)`` arrays into non-overlapping ``seq_len`` chunks.

    The last partial chunk is zero-padded; the returned boolean frame mask
    marks real frames.
    """
    noisy_mag = np.asarray(noisy_mag)
    target = np.asarray(target)
    if seq_len < 1:
        raise InvalidArgument("seq_len must be >= 1")
    T = noisy_mag.shape[0]
    out = []
    for s in range(0, T, seq_len):
        m = noisy_mag[s : s + seq_len]
        y = target[s : s + seq_len]
        n = m.shape[0]
        valid = np.zeros(seq_len, bool)
        valid[:n] = True
        if n < seq_len:
            m = np.concatenate([m, np.zeros((seq_len - n,) + m.shape[1:], m.dtype)])
            y = np.concatenate([y, np.zeros((seq_len - n,) + y.shape[1:], y.dtype)])
        out.append((m, y, valid))
    return out
