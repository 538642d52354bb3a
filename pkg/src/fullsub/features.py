"""Model inputs: mean normalization, circular sub-band unfolding, fusion with the full-band output.

Magnitude grids are ``(..., T, F)``; per-frequency sub-band sequences are
``(..., F, T, W)`` where ``W`` is ``2N + 1`` before and ``2N + 2`` after
concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fullsub.errors import InvalidArgument, ShapeMismatch

MEAN_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    n_neighbors: int = 15
    n_bins: int = 257

    def __post_init__(self):
        if self.n_neighbors < 0 or 2 * self.n_neighbors + 1 > self.n_bins:
            raise InvalidArgument(f"need 0 <= 2N+1 <= F, got N={self.n_neighbors}, F={self.n_bins}")

    @property
    def unit_width(self) -> int:
        return 2 * self.n_neighbors + 1

    @property
    def input_width(self) -> int:
        return 2 * self.n_neighbors + 2


def _guard(mu):
    return np.maximum(mu, MEAN_FLOOR)


def full_band_mean(mag) -> np.ndarray:
    """Mean over the last two axes (T, F), guarded, with those axes kept."""
    mag = np.asarray(mag)
    if mag.ndim < 2 or mag.shape[-1] == 0 or mag.shape[-2] == 0:
        raise InvalidArgument("magnitude grid must be at least 1 x 1")
    return _guard(mag.mean(axis=(-2, -1), keepdims=True))


def normalize_full_band(mag):
    return mag / full_band_mean(mag)


def cumulative_full_band_mean(mag) -> np.ndarray:
    """Running mean over every entry of frames ``0..t``; shape ``(..., T, 1)``."""
    mag = np.asarray(mag)
    T, F = mag.shape[-2:]
    counts = F * np.arange(1, T + 1, dtype=np.float64)
    return _guard(np.cumsum(mag.sum(axis=-1), axis=-1) / counts)[..., None]


def circular_neighbors(n_bins: int, n_neighbors: int) -> np.ndarray:
    """Index table ``(F, 2N+1)`` with row f = (f-N .. f+N) mod F."""
    if 2 * n_neighbors + 1 > n_bins or n_neighbors < 0:
        raise InvalidArgument(f"2N+1 = {2 * n_neighbors + 1} exceeds F = {n_bins}")
    offsets = np.arange(-n_neighbors, n_neighbors + 1)
    return (np.arange(n_bins)[:, None] + offsets) % n_bins


def subband_unfold(mag, n_neighbors: int) -> np.ndarray:
    """Sub-band units ``(..., F, T, 2N+1)`` with circular boundary frequencies."""
    mag = np.asarray(mag)
    idx = circular_neighbors(mag.shape[-1], n_neighbors)
    units = mag[..., idx]  # (..., T, F, 2N+1)
    return np.swapaxes(units, -3, -2)


def concat_full_band(units, fb_out) -> np.ndarray:
    """Append the f-th full-band output component to every row of sequence f."""
    units = np.asarray(units)
    fb_out = np.asarray(fb_out)
    if fb_out.shape[-2:] != (units.shape[-2], units.shape[-3]) or fb_out.shape[:-2] != units.shape[:-3]:
        raise ShapeMismatch(f"units {units.shape} incompatible with full-band output {fb_out.shape}")
    col = np.swapaxes(fb_out, -1, -2)[..., None]  # (..., F, T, 1)
    return np.concatenate([units, col.astype(units.dtype, copy=False)], axis=-1)


def subband_mean(seq) -> np.ndarray:
    """Per-sequence mean over (T, W), guarded, axes kept."""
    seq = np.asarray(seq)
    if seq.ndim < 2 or seq.shape[-1] == 0 or seq.shape[-2] == 0:
        raise InvalidArgument("sub-band sequence must be non-empty")
    return _guard(seq.mean(axis=(-2, -1), keepdims=True))


def cumulative_subband_mean(seq) -> np.ndarray:
    """Running mean over rows ``0..t`` of each sequence; shape ``(..., F, T, 1)``."""
    seq = np.asarray(seq)
    T, W = seq.shape[-2:]
    counts = W * np.arange(1, T + 1, dtype=np.float64)
    return _guard(np.cumsum(seq.sum(axis=-1), axis=-1) / counts)[..., None]


class CumulativeMeans:
    """Streaming accumulators for the full-band and per-frequency means."""

    def __init__(self, n_bins: int, width: int):
        self.n_bins = n_bins
        self.width = width
        self.frames = 0
        self.full_sum = 0.0
        self.sub_sum = np.zeros(n_bins)

    def update_full(self, frame_mag: np.ndarray) -> float:
        self.frames += 1
        self.full_sum += float(np.sum(frame_mag, dtype=np.float64))
        return max(self.full_sum / (self.n_bins * self.frames), MEAN_FLOOR)

    def update_sub(self, rows: np.ndarray) -> np.ndarray:
        """``rows`` is the current (F, W) concatenated frame; call after update_full."""
        self.sub_sum += rows.sum(axis=-1, dtype=np.float64)
        return np.maximum(self.sub_sum / (self.width * self.frames), MEAN_FLOOR)
