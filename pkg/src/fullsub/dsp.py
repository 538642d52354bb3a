"""STFT analysis / weighted overlap-add synthesis.

Frames are laid out time-major: a spectrogram is a complex array of shape
``(..., T, F)`` with ``F = fft_len // 2 + 1``.

Padding convention: the signal is pre-padded with ``win_len - hop`` zeros,
post-padded to a whole number of hops and then by another ``win_len - hop``
zeros, so every original sample is covered by the full set of overlapping
frames. Frame ``k`` covers padded samples ``[k*hop, k*hop + win_len)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fullsub.errors import InvalidArgument, ShapeMismatch

# Envelope values at or below this are treated as uncovered (output zero).
ENVELOPE_FLOOR = 1e-12


def hann_window(n: int, periodic: bool = True) -> np.ndarray:
    """Hann window of length ``n`` in float64.

    The periodic form (denominator ``n``) sums to a constant at hop ``n/2``;
    the symmetric form uses ``n - 1``.
    """
    if n < 2:
        raise InvalidArgument(f"window length must be >= 2, got {n}")
    denom = n if periodic else n - 1
    i = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / denom))


def overlap_sum(window: np.ndarray, hop: int, squared: bool = False) -> np.ndarray:
    """Steady-state sum of shifted windows, one value per offset in ``[0, hop)``."""
    w = np.asarray(window, dtype=np.float64)
    if squared:
        w = w * w
    n = len(w)
    reps = -(-n // hop)
    padded = np.zeros(reps * hop)
    padded[:n] = w
    return padded.reshape(reps, hop).sum(axis=0)


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 512
    hop: int = 256
    fft_len: int = 512
    sample_rate: int = 16000
    synthesis: str = "wola"
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.win_len < 2 or self.hop < 1:
            raise InvalidArgument("win_len must be >= 2 and hop >= 1")
        if self.win_len % self.hop:
            raise InvalidArgument(f"hop {self.hop} does not divide win_len {self.win_len}")
        if self.fft_len < self.win_len:
            raise InvalidArgument("fft_len must be >= win_len")
        if self.synthesis not in ("wola", "ola"):
            raise InvalidArgument(f"unknown synthesis scheme {self.synthesis!r}")
        w = hann_window(self.win_len) if self.window is None else np.asarray(self.window, np.float64)
        if w.shape != (self.win_len,):
            raise InvalidArgument("window length must equal win_len")
        w.setflags(write=False)
        object.__setattr__(self, "window", w)
        if self.synthesis == "ola":
            s = overlap_sum(w, self.hop)
            if np.ptp(s) > 1e-10 * np.max(np.abs(s)):
                raise InvalidArgument("window is not COLA at this hop")
        else:
            # WOLA divides by the w**2 envelope, which only has to stay positive.
            if np.min(overlap_sum(w, self.hop, squared=True)) <= ENVELOPE_FLOOR:
                raise InvalidArgument("squared-window envelope vanishes at this hop")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def pad(self) -> int:
        return self.win_len - self.hop

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop) + self.pad // self.hop

    def bin_frequency(self, f: int) -> float:
        return f * self.sample_rate / self.fft_len


def _pad_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n = x.shape[-1]
    tail = (-n) % cfg.hop + cfg.pad
    widths = [(0, 0)] * (x.ndim - 1) + [(cfg.pad, tail)]
    return np.pad(x, widths)


def stft(signal, cfg: StftConfig | None = None) -> np.ndarray:
    """Complex spectrogram of shape ``(..., T, F)``."""
    cfg = cfg or StftConfig()
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise InvalidArgument("signal must be non-empty")
    xp = _pad_signal(x, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.win_len, axis=-1)[..., :: cfg.hop, :]
    return np.fft.rfft(frames * cfg.window, n=cfg.fft_len, axis=-1)


def synthesis_frames(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Inverse-transform every frame and apply the synthesis window."""
    spec = np.asarray(spec)
    if spec.ndim < 2 or spec.shape[-1] != cfg.n_bins:
        raise ShapeMismatch(f"expected (..., T, {cfg.n_bins}) spectrogram, got {spec.shape}")
    frames = np.fft.irfft(spec, n=cfg.fft_len, axis=-1)[..., : cfg.win_len]
    if cfg.synthesis == "wola":
        frames = frames * cfg.window
    return frames


def frame_envelope(cfg: StftConfig) -> np.ndarray:
    """Per-frame normalizer contribution (``w**2`` for WOLA, ``w`` for OLA)."""
    return cfg.window**2 if cfg.synthesis == "wola" else cfg.window


def istft(spec, cfg: StftConfig | None = None, length: int | None = None, trim: bool = True) -> np.ndarray:
    """Overlap-add reconstruction normalized by the summed window envelope.

    With ``trim`` the padding added by :func:`stft` is removed and the result
    is cut to ``length`` samples (default: every sample the frames fully
    cover). ``trim=False`` returns the raw padded-domain signal.
    """
    cfg = cfg or StftConfig()
    frames = synthesis_frames(spec, cfg)
    n_frames = frames.shape[-2]
    total = (n_frames - 1) * cfg.hop + cfg.win_len
    out = np.zeros(frames.shape[:-2] + (total,))
    env = np.zeros(total)
    wenv = frame_envelope(cfg)
    for k in range(n_frames):
        s = k * cfg.hop
        out[..., s : s + cfg.win_len] += frames[..., k, :]
        env[s : s + cfg.win_len] += wenv
    covered = env > ENVELOPE_FLOOR
    out = np.where(covered, out / np.where(covered, env, 1.0), 0.0)
    if not trim:
        return out
    if length is None:
        length = max(total - 2 * cfg.pad, 0)
    out = out[..., cfg.pad : cfg.pad + length]
    if out.shape[-1] < length:
        widths = [(0, 0)] * (out.ndim - 1) + [(0, length - out.shape[-1])]
        out = np.pad(out, widths)
    return out


def magnitude(spec) -> np.ndarray:
    return np.abs(spec)
