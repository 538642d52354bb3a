"""Complex ideal ratio mask (cIRM) and its tanh compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fullsub.errors import InvalidArgument, OutOfRange, ShapeMismatch


@dataclass(frozen=True)
class CrmConfig:
    K: float = 10.0
    C: float = 0.1
    eps: float = 1e-10
    # predicted masks are clamped to +-(K - clamp_margin) before decompression
    clamp_margin: float = 1e-6

    def __post_init__(self):
        if self.K <= 0 or self.C <= 0 or self.eps < 0:
            raise InvalidArgument("K and C must be positive, eps non-negative")


def compute_cirm(noisy, clean, cfg: CrmConfig | None = None) -> np.ndarray:
    """Mask ``M = S * conj(X) / (|X|^2 + eps)`` as a real array ``(..., 2)``."""
    cfg = cfg or CrmConfig()
    noisy = np.asarray(noisy)
    clean = np.asarray(clean)
    if noisy.shape != clean.shape:
        raise ShapeMismatch(f"noisy {noisy.shape} vs clean {clean.shape}")
    xr, xi = noisy.real, noisy.imag
    sr, si = clean.real, clean.imag
    denom = xr * xr + xi * xi + cfg.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        mr = (xr * sr + xi * si) / denom
        mi = (xr * si - xi * sr) / denom
    if cfg.eps == 0:
        dead = denom == 0
        mr = np.where(dead, 0.0, mr)
        mi = np.where(dead, 0.0, mi)
    return np.stack([mr, mi], axis=-1)


def compress(m, cfg: CrmConfig | None = None):
    """``K * (1 - exp(-C m)) / (1 + exp(-C m))``, written as ``K tanh(C m / 2)``."""
    cfg = cfg or CrmConfig()
    out = cfg.K * np.tanh(0.5 * cfg.C * np.asarray(m, dtype=np.float64))
    # tanh rounds to exactly 1.0 for large inputs; keep the open interval
    lim = np.nextafter(cfg.K, 0.0)
    return np.clip(out, -lim, lim)


def decompress(mc, cfg: CrmConfig | None = None):
    """Exact inverse of :func:`compress`; requires ``|mc| < K``."""
    cfg = cfg or CrmConfig()
    mc = np.asarray(mc, dtype=np.float64)
    if np.any(np.abs(mc) >= cfg.K) or not np.all(np.isfinite(mc)):
        raise OutOfRange(f"compressed mask values must lie strictly inside (-{cfg.K}, {cfg.K})")
    # -(1/C) ln((K - m)/(K + m)) == (2/C) artanh(m / K), the latter is accurate near 0
    return (2.0 / cfg.C) * np.arctanh(mc / cfg.K)


def clamp_compressed(mc, cfg: CrmConfig | None = None):
    cfg = cfg or CrmConfig()
    lim = cfg.K - cfg.clamp_margin
    return np.clip(mc, -lim, lim)


def apply_mask(noisy, mask) -> np.ndarray:
    """Complex multiply each bin of ``noisy`` by ``mask[..., 0] + 1j * mask[..., 1]``."""
    noisy = np.asarray(noisy)
    mask = np.asarray(mask)
    if mask.shape != noisy.shape + (2,):
        raise ShapeMismatch(f"mask {mask.shape} does not match spectrogram {noisy.shape}")
    return noisy * (mask[..., 0] + 1j * mask[..., 1])
