"""Loss, training loop and validation shared by FullSubNet and both baselines."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fullsub import data as datamod
from fullsub.dsp import StftConfig, magnitude, stft
from fullsub.errors import InvalidArgument, NonFiniteLoss, ShapeMismatch
from fullsub.mask import CrmConfig, compress, compute_cirm
from fullsub.metrics import evaluate_set
from fullsub.model import Network, save_weights
from fullsub.nncore import Adam
from fullsub.stream import enhance_with_prediction, extended_input

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    seq_len: int = 192
    tau: int = 2
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    variant: str = "fullsubnet"

    def __post_init__(self):
        if self.tau < 0 or self.seq_len <= self.tau:
            raise InvalidArgument("need tau >= 0 and seq_len > tau")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")


def loss_weights(valid, tau: int, shape) -> np.ndarray:
    """Per-step weights ``(B, T)``: step t counts iff t >= tau and target frame t - tau is real."""
    B, T = shape
    if valid is None:
        valid = np.ones((B, T), bool)
    valid = np.asarray(valid, bool).reshape(B, T)
    w = np.zeros((B, T))
    if T > tau:
        w[:, tau:] = valid[:, : T - tau]
    return w


def masked_mse(pred, target, valid=None, tau: int = 0) -> tuple[float, np.ndarray]:
    """MSE between ``pred[:, t]`` and ``target[:, t - tau]`` over kept frames, both channels.

    Returns ``(loss, d loss / d pred)``. Shapes are ``(B, T, F, 2)`` (or
    unbatched ``(T, F, 2)``).
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    squeeze = pred.ndim == 3
    if squeeze:
        pred, target = pred[None], target[None]
        valid = None if valid is None else np.asarray(valid)[None]
    B, T = pred.shape[:2]
    w = loss_weights(valid, tau, (B, T))
    shifted = np.zeros_like(target)
    if T > tau:
        shifted[:, tau:] = target[:, : T - tau]
    per_frame = pred.shape[2] * pred.shape[3]
    denom = w.sum() * per_frame
    if denom == 0:
        return 0.0, np.zeros_like(pred)
    # padded frames may hold anything; drop them instead of multiplying by zero
    diff = np.where(w[:, :, None, None] > 0, pred - shifted, 0).astype(pred.dtype, copy=False)
    wd = diff * w[:, :, None, None].astype(diff.dtype)
    loss = float(np.sum(wd * diff, dtype=np.float64) / denom)
    grad = (2.0 / denom) * wd
    return loss, (grad[0] if squeeze else grad)


# --- mask estimators (anything that yields a compressed-mask prediction) ------------


class NetworkEstimator:
    def __init__(self, net: Network, norm: str = "offline"):
        self.net, self.norm = net, norm
        self.tau, self.crm = net.tau, net.crm

    def estimate(self, X, mix=None):
        return self.net.forward(magnitude(X), norm=self.norm)[0]


class OracleEstimator:
    """Emits the compressed true cIRM, delayed by tau like a real model."""

    def __init__(self, cfg: StftConfig, tau: int = 2, crm: CrmConfig | None = None):
        self.cfg, self.tau, self.crm = cfg, tau, crm or CrmConfig()

    def estimate(self, X, mix):
        extra = X.shape[0] - self.cfg.n_frames(len(mix.speech))
        S = stft(np.concatenate([mix.speech, np.zeros(extra * self.cfg.hop)]), self.cfg)
        target = compress(compute_cirm(X, S, self.crm), self.crm)
        out = np.zeros_like(target)
        out[self.tau :] = target[: X.shape[0] - self.tau]
        return out


class ConstantEstimator:
    """Same uncompressed mask value (real, imag) in every bin."""

    def __init__(self, value=(1.0, 0.0), tau: int = 2, crm: CrmConfig | None = None):
        self.crm = crm or CrmConfig()
        self.value = compress(np.asarray(value, np.float64), self.crm)
        self.tau = tau

    def estimate(self, X, mix=None):
        return np.broadcast_to(self.value, X.shape + (2,)).copy()


def as_estimator(model):
    return NetworkEstimator(model) if isinstance(model, Network) else model


def make_enhancer(model, cfg: StftConfig):
    """Mixture -> enhanced waveform through normalize, forward, decompress, mask, istft."""
    est = as_estimator(model)

    def enhance(mix):
        x = mix.mixture
        X = stft(extended_input(x, cfg, est.tau), cfg)
        return enhance_with_prediction(X, est.estimate(X, mix), est.tau, est.crm, cfg, len(x))

    return enhance


def validate(model, pairs: Sequence[datamod.TrainingPair], cfg: StftConfig) -> dict:
    """Whole-utterance loss and SI-SDR of enhanced waveforms on held-out pairs."""
    est = as_estimator(model)
    losses = []
    for p in pairs:
        X = stft(p.mixture.mixture, cfg)
        loss, _ = masked_mse(est.estimate(X, p.mixture), p.target, None, est.tau)
        losses.append(loss)
    report = evaluate_set(make_enhancer(est, cfg), [p.mixture for p in pairs], cfg=cfg)
    agg = report.aggregate()
    agg["loss"] = float(np.mean(losses))
    agg["report"] = report
    return agg


# --- training loop ------------------------------------------------------------------


def make_batches(pairs: Iterable[datamod.TrainingPair], seq_len: int, batch_size: int, rng: np.random.Generator):
    chunks = []
    for p in pairs:
        chunks.extend(datamod.chunk_sequences(p.noisy_mag, p.target, seq_len))
    order = rng.permutation(len(chunks))
    for s in range(0, len(order), batch_size):
        idx = order[s : s + batch_size]
        yield (
            np.stack([chunks[i][0] for i in idx]),
            np.stack([chunks[i][1] for i in idx]),
            np.stack([chunks[i][2] for i in idx]),
        )


def train_step(net: Network, opt: Adam, mag, target, valid, tau: int) -> float:
    pred, cache = net.forward(mag, keep=True)
    loss, grad = masked_mse(pred, target.astype(pred.dtype), valid, tau)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    grads = net.backward(grad, cache)
    opt.step(net.params, grads)
    return loss


def train_epoch(net: Network, pairs, cfg: TrainConfig, opt: Adam, rng: np.random.Generator, epoch: int = 0) -> float:
    """One pass over ``pairs``; returns the mean batch loss."""
    losses = []
    for step, (mag, target, valid) in enumerate(make_batches(pairs, cfg.seq_len, cfg.batch_size, rng)):
        try:
            losses.append(train_step(net, opt, mag, target, valid, net.tau))
        except NonFiniteLoss as e:
            raise NonFiniteLoss(f"{e} at epoch {epoch}, step {step} (seed {cfg.seed}, optimizer step {opt.t})") from None
    return float(np.mean(losses)) if losses else float("nan")


class Trainer:
    """Dynamic-mixing training: every epoch re-mixes the clean set with fresh noise, SNRs and RIRs."""

    def __init__(
        self,
        net: Network,
        cfg: TrainConfig,
        stft_cfg: StftConfig,
        clean_set: Sequence[np.ndarray],
        noise_set: Sequence[np.ndarray],
        mix_kwargs: dict | None = None,
    ):
        if net.tau != cfg.tau:
            raise InvalidArgument(f"model tau {net.tau} differs from training tau {cfg.tau}")
        self.net, self.cfg, self.stft_cfg = net, cfg, stft_cfg
        self.clean_set, self.noise_set = clean_set, noise_set
        self.mix_kwargs = mix_kwargs or {}
        self.opt = Adam(net.params, lr=cfg.lr)
        self.epoch = 0
        self.history: list[dict] = []

    def epoch_pairs(self, epoch: int):
        rng = np.random.default_rng([self.cfg.seed, epoch])
        return list(
            datamod.dynamic_mix_epoch(self.clean_set, self.noise_set, rng, self.stft_cfg, self.net.crm, **self.mix_kwargs)
        )

    def run_epoch(self) -> dict:
        pairs = self.epoch_pairs(self.epoch)
        rng = np.random.default_rng([self.cfg.seed, self.epoch, 1])
        loss = train_epoch(self.net, pairs, self.cfg, self.opt, rng, self.epoch)
        self.epoch += 1
        rec = {"epoch": self.epoch, "train_loss": loss, "step": self.opt.t}
        self.history.append(rec)
        log.info("epoch %d  train loss %.5f", self.epoch, loss)
        return rec

    def fit(self, epochs: int | None = None, valid_pairs=None, valid_every: int = 0) -> list[dict]:
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            rec = self.run_epoch()
            if valid_pairs and valid_every and self.epoch % valid_every == 0:
                v = validate(self.net, valid_pairs, self.stft_cfg)
                rec["valid_loss"] = v["loss"]
                rec["valid_si_sdr"] = v["si_sdr"]
        return self.history

    def save_checkpoint(self, path, extra: dict | None = None) -> Path:
        """Weight file plus a ``key = value`` sidecar with config and step count."""
        path = Path(path)
        save_weights(self.net, path)
        side = path.with_suffix(path.suffix + ".txt")
        lines = [f"model.variant = {self.net.kind}"]
        lines += [f"model.{k} = {v}" for k, v in self.net.config().items()]
        lines += [f"train.{k} = {v}" for k, v in asdict(self.cfg).items()]
        lines += [f"stft.{k} = {getattr(self.stft_cfg, k)}" for k in ("win_len", "hop", "fft_len", "sample_rate")]
        lines += [f"train.step = {self.opt.t}", f"train.epochs_done = {self.epoch}"]
        lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
        side.write_text("\n".join(lines) + "\n")
        return side


def gradient_check(
    n_bins: int = 9,
    n_neighbors: int = 2,
    full_hidden: int = 8,
    sub_hidden: int = 6,
    seq_len: int = 7,
    seed: int = 0,
    tau: int = 2,
    step: float = 1e-5,
) -> float:
    """Worst per-tensor relative error of BPTT against central differences, in float64.

    The loss is the training loss on a random compressed-mask target, so the
    check covers normalization, both LSTM stacks, the ReLU head and the unfold.
    """
    from fullsub.model import FullSubNet
    from fullsub.nncore import finite_diff_gradients, max_relative_error

    net = FullSubNet(n_bins, n_neighbors, full_hidden, sub_hidden, tau=tau, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    mag = rng.random((1, seq_len, n_bins)) + 0.05
    target = compress(rng.standard_normal((1, seq_len, n_bins, 2)), net.crm)

    def f(_):
        return masked_mse(net.forward(mag)[0], target, None, tau)[0]

    pred, cache = net.forward(mag, keep=True)
    _, grad = masked_mse(pred, target, None, tau)
    analytic = net.backward(grad, cache)
    numeric = finite_diff_gradients(f, net.params, step)
    return max_relative_error(analytic, numeric)
