"""Frame-by-frame real-time inference, its offline batch twin, and a latency benchmark.

Timing model: every ``hop`` input samples one analysis frame is formed from
the last ``win_len`` samples. The mask emitted at that step belongs to the
frame ``tau`` steps earlier, so output lags input by
``(win_len - hop) + tau * hop`` samples (48 ms at the defaults).
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from fullsub.dsp import ENVELOPE_FLOOR, StftConfig, frame_envelope, istft, magnitude, stft
from fullsub.errors import InvalidArgument
from fullsub.features import CumulativeMeans
from fullsub.mask import apply_mask, clamp_compressed, decompress
from fullsub.model import Network

NORM_MODES = ("offline", "cumulative")


def latency_samples(cfg: StftConfig, tau: int) -> int:
    return cfg.pad + tau * cfg.hop


def masks_from_prediction(pred, crm) -> np.ndarray:
    return decompress(clamp_compressed(np.asarray(pred, np.float64), crm), crm)


def align_prediction(pred: np.ndarray, tau: int) -> np.ndarray:
    """Shift predictions so row t holds the estimate for frame t; the last tau rows become zero."""
    out = np.zeros_like(pred)
    T = pred.shape[0]
    if T > tau:
        out[: T - tau] = pred[tau:]
    return out


def extended_input(x: np.ndarray, cfg: StftConfig, tau: int) -> np.ndarray:
    """Append the tau hops of silence needed to flush the output delay."""
    return np.concatenate([np.asarray(x, np.float64), np.zeros(tau * cfg.hop)])


def offline_stats(net: Network, x, cfg: StftConfig):
    """Whole-clip normalization means, computed over exactly the frames the model sees."""
    X = stft(extended_input(x, cfg, net.tau), cfg)
    return net.stats(magnitude(X))


def enhance_offline(net: Network, x, cfg: StftConfig | None = None, norm: str = "offline", stats=None) -> np.ndarray:
    """Batch enhancement of a whole clip; output has the input's length."""
    cfg = cfg or StftConfig()
    x = np.asarray(x, np.float64)
    X = stft(extended_input(x, cfg, net.tau), cfg)
    pred = net.forward(magnitude(X), norm=norm, stats=stats)[0]
    return enhance_with_prediction(X, pred, net.tau, net.crm, cfg, len(x))


def enhance_with_prediction(X, pred, tau, crm, cfg, length) -> np.ndarray:
    masks = align_prediction(masks_from_prediction(pred, crm), tau)
    return istft(apply_mask(X, masks), cfg, length=length)


@dataclass
class StreamState:
    """Mutable per-stream buffers. Single owner; never shared between threads."""

    ring: np.ndarray  # last win_len input samples (starts as zero pre-padding)
    pending: np.ndarray  # input samples not yet forming a full hop
    net_states: dict
    means: CumulativeMeans
    delay: deque  # spectra of frames awaiting their mask
    ola: np.ndarray  # overlap-add accumulator, win_len samples
    env: np.ndarray  # matching window-envelope accumulator
    consumed: int = 0
    frames: int = 0
    emitted: int = 0
    to_drop: int = 0  # leading padded-domain samples not yet discarded
    frame_times: list = field(default_factory=list)


class StreamEnhancer:
    """Real-time enhancer around a trained network.

    ``norm="offline"`` requires ``stats`` (see :func:`offline_stats`);
    ``norm="cumulative"`` estimates the means from the frames seen so far.
    """

    def __init__(self, net: Network, cfg: StftConfig | None = None, norm: str = "cumulative", stats=None):
        if norm not in NORM_MODES:
            raise InvalidArgument(f"norm must be one of {NORM_MODES}")
        if norm == "offline" and stats is None:
            raise InvalidArgument("offline normalization needs precomputed means")
        self.net = net
        self.cfg = cfg or StftConfig()
        if self.cfg.n_bins != net.n_bins:
            raise InvalidArgument(f"STFT has {self.cfg.n_bins} bins but the model expects {net.n_bins}")
        self.norm = norm
        self.stats = None
        if norm == "offline":
            mu_full, mu_sub = stats
            self.stats = (np.asarray(mu_full).reshape(()), np.asarray(mu_sub).reshape(-1))
        self._wenv = frame_envelope(self.cfg)
        self.state = self.new_state()

    @property
    def latency(self) -> int:
        return latency_samples(self.cfg, self.net.tau)

    def new_state(self) -> StreamState:
        cfg = self.cfg
        return StreamState(
            ring=np.zeros(cfg.win_len),
            pending=np.zeros(0),
            net_states=self.net.init_states(),
            means=CumulativeMeans(self.net.n_bins, self.net.sub_width),
            delay=deque(),
            ola=np.zeros(cfg.win_len),
            env=np.zeros(cfg.win_len),
            to_drop=cfg.pad,
        )

    def reset(self):
        self.state = self.new_state()

    def push_samples(self, samples) -> np.ndarray:
        """Consume any number of samples; return whatever output became final."""
        st = self.state
        samples = np.asarray(samples, np.float64).reshape(-1)
        st.consumed += len(samples)
        buf = np.concatenate([st.pending, samples]) if len(st.pending) else samples
        hop = self.cfg.hop
        outs = []
        n_full = len(buf) // hop
        for k in range(n_full):
            out = self._process_hop(buf[k * hop : (k + 1) * hop])
            if out is not None:
                outs.append(out)
        st.pending = buf[n_full * hop :].copy()
        if not outs:
            return np.zeros(0)
        y = np.concatenate(outs)
        st.emitted += len(y)
        return y

    def _process_hop(self, chunk):
        cfg, st, net = self.cfg, self.state, self.net
        hop, win = cfg.hop, cfg.win_len
        st.ring[:-hop] = st.ring[hop:]
        st.ring[-hop:] = chunk
        X = np.fft.rfft(st.ring * cfg.window, n=cfg.fft_len)
        pred = net.step(magnitude(X), st.net_states, st.means, self.stats)
        st.delay.append(X)
        st.frames += 1
        if len(st.delay) <= net.tau:
            return None  # warm-up: no mask is final yet
        X_old = st.delay.popleft()
        mask = masks_from_prediction(pred, net.crm)
        Y = apply_mask(X_old, mask)
        frame = np.fft.irfft(Y, n=cfg.fft_len)[:win]
        if cfg.synthesis == "wola":
            frame = frame * cfg.window
        st.ola += frame
        st.env += self._wenv
        head, env = st.ola[:hop], st.env[:hop]
        covered = env > ENVELOPE_FLOOR
        out = np.where(covered, head / np.where(covered, env, 1.0), 0.0)
        st.ola[:-hop] = st.ola[hop:]
        st.ola[-hop:] = 0.0
        st.env[:-hop] = st.env[hop:]
        st.env[-hop:] = 0.0
        if st.to_drop:
            n = min(st.to_drop, hop)
            st.to_drop -= n
            out = out[n:]
        return out

    def flush(self) -> np.ndarray:
        """Feed enough silence to release every sample consumed so far."""
        need = self.latency + (-self.state.consumed) % self.cfg.hop
        return self.push_samples(np.zeros(need))


def enhance_stream(
    net: Network, x, cfg: StftConfig | None = None, norm: str = "cumulative", stats=None, block: int | None = None
) -> np.ndarray:
    """Run a whole clip through :class:`StreamEnhancer` in blocks; output has the input's length."""
    cfg = cfg or StftConfig()
    x = np.asarray(x, np.float64)
    enh = StreamEnhancer(net, cfg, norm, stats)
    block = block or cfg.hop
    outs = [enh.push_samples(x[s : s + block]) for s in range(0, len(x), block)]
    outs.append(enh.flush())
    return np.concatenate(outs)[: len(x)]


def bench_latency(
    net: Network, seconds: float = 30.0, reps: int = 3, cfg: StftConfig | None = None, seed: int = 0, keep_times: bool = False
) -> dict:
    """Per-frame wall time of the full streaming path (analysis, both nets, synthesis).

    ``keep_times`` adds the raw per-frame milliseconds under ``"frame_ms"``.
    """
    cfg = cfg or StftConfig()
    rng = np.random.default_rng(seed)
    x = 0.1 * rng.standard_normal(int(seconds * cfg.sample_rate))
    times = []
    for _ in range(reps):
        enh = StreamEnhancer(net, cfg, "cumulative")
        for s in range(0, len(x) - cfg.hop + 1, cfg.hop):
            chunk = x[s : s + cfg.hop]
            t0 = time.perf_counter()
            enh.push_samples(chunk)
            times.append(time.perf_counter() - t0)
    t = np.asarray(times) * 1e3
    out = {
        "frames": int(t.size),
        "mean_ms": float(t.mean()),
        "p95_ms": float(np.percentile(t, 95)),
        "max_ms": float(t.max()),
        "hop_ms": 1e3 * cfg.hop / cfg.sample_rate,
        "window_ms": 1e3 * cfg.win_len / cfg.sample_rate,
        "real_time_factor": float(t.mean() / (1e3 * cfg.hop / cfg.sample_rate)),
    }
    if keep_times:
        out["frame_ms"] = t.tolist()
    return out
