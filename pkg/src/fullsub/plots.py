"""Report figures (PNG) written next to the CSV/JSON outputs."""

from __future__ import annotations

import functools
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with matplotlib.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _new(width=5.0, height=3.2, ncols=1):
    fig = Figure(figsize=(width, height))
    return fig, fig.subplots(1, ncols)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    return path


@_styled
def eval_figure(report, path) -> Path:
    """Per-clip SI-SDR before/after enhancement, split by reverberation."""
    fig, (ax0, ax1) = _new(8.0, 3.2, ncols=2)
    noisy = np.array([r.noisy_si_sdr for r in report.rows])
    enh = np.array([r.si_sdr for r in report.rows])
    rev = np.array([r.reverberant for r in report.rows], bool)
    for sel, label, marker in ((~rev, "dry", "o"), (rev, "reverberant", "^")):
        if sel.any():
            ax0.scatter(noisy[sel], enh[sel], s=14, marker=marker, label=label)
    lo, hi = float(min(noisy.min(), enh.min())), float(max(noisy.max(), enh.max()))
    ax0.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax0.set_xlabel("noisy SI-SDR (dB)")
    ax0.set_ylabel("enhanced SI-SDR (dB)")
    ax0.legend(frameon=False)
    groups = [("all", np.ones_like(rev)), ("reverb", rev), ("dry", ~rev)]
    names = [g for g, s in groups if s.any()]
    gains = [enh[s] - noisy[s] for _, s in groups if s.any()]
    ax1.boxplot(gains, tick_labels=names)
    ax1.axhline(0.0, color="k", lw=0.8)
    ax1.set_ylabel("SI-SDR improvement (dB)")
    fig.tight_layout()
    return _save(fig, path)


@_styled
def bench_figure(frame_ms, budget_ms: float, path) -> Path:
    fig, ax = _new()
    ax.hist(frame_ms, bins=60)
    ax.axvline(budget_ms, color="C3", lw=1.0, label=f"budget {budget_ms:g} ms")
    ax.axvline(float(np.mean(frame_ms)), color="k", lw=1.0, ls="--", label="mean")
    ax.set_xlabel("per-frame time (ms)")
    ax.set_ylabel("frames")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


@_styled
def loss_figure(history, path) -> Path:
    fig, ax = _new()
    ep = [h["epoch"] for h in history]
    ax.plot(ep, [h["train_loss"] for h in history], marker="o", ms=3, label="train")
    val = [(h["epoch"], h["valid_loss"]) for h in history if "valid_loss" in h]
    if val:
        ax.plot(*zip(*val), marker="s", ms=3, label="held-out")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (compressed mask)")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
