"""FullSubNet and its two ablation baselines, parameter counting, weight files.

All networks map a noisy magnitude grid ``(B, T, F)`` to a compressed complex
mask prediction ``(B, T, F, 2)``. The prediction emitted at step ``t`` is the
estimate for frame ``t - tau``; aligning it is the caller's job (see
:func:`fullsub.train.masked_mse` and :func:`fullsub.stream.enhance_offline`).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from fullsub import features
from fullsub.errors import CorruptWeights, InvalidArgument, ShapeMismatch
from fullsub.mask import CrmConfig
from fullsub.nncore import (
    LinearParams,
    LstmParams,
    LstmState,
    init_linear,
    init_lstm,
    linear,
    linear_param_count,
    lstm_layer_backward,
    lstm_cell,
    lstm_layer_forward,
    lstm_param_count,
)

NORM_MODES = ("offline", "cumulative")


class Network:
    """Shared plumbing: a flat ``name -> tensor`` dict plus stacked-layer helpers."""

    kind = "network"
    sub_width = 1

    def __init__(self, n_bins: int, tau: int = 2, crm: CrmConfig | None = None):
        if tau < 0:
            raise InvalidArgument("tau must be >= 0")
        self.n_bins = n_bins
        self.tau = tau
        self.crm = crm or CrmConfig()
        self.params: dict[str, np.ndarray] = {}

    # construction ----------------------------------------------------------
    def _add_lstm(self, name, rng, input_dim, hidden_dim, dtype):
        p = init_lstm(rng, input_dim, hidden_dim, dtype)
        self.params[f"{name}.W"] = p.W
        self.params[f"{name}.U"] = p.U
        self.params[f"{name}.b"] = p.b

    def _add_linear(self, name, rng, in_dim, out_dim, dtype):
        p = init_linear(rng, in_dim, out_dim, dtype)
        self.params[f"{name}.W"] = p.W
        self.params[f"{name}.b"] = p.b

    def lstm(self, name) -> LstmParams:
        return LstmParams(self.params[f"{name}.W"], self.params[f"{name}.U"], self.params[f"{name}.b"])

    def linear(self, name) -> LinearParams:
        return LinearParams(self.params[f"{name}.W"], self.params[f"{name}.b"])

    def stack(self, prefix: str, n_layers: int) -> list[LstmParams]:
        return [self.lstm(f"{prefix}.lstm{k + 1}") for k in range(n_layers)]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype):
        for k, v in self.params.items():
            self.params[k] = v.astype(dtype)
        return self

    def zero_(self):
        for v in self.params.values():
            v[...] = 0
        return self

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def config(self) -> dict:
        raise NotImplementedError

    # helpers for subclasses -------------------------------------------------
    def _check_input(self, mag):
        mag = np.asarray(mag)
        squeeze = mag.ndim == 2
        if squeeze:
            mag = mag[None]
        if mag.ndim != 3 or mag.shape[-1] != self.n_bins:
            raise ShapeMismatch(f"expected (B, T, {self.n_bins}) magnitudes, got {np.shape(mag)}")
        if mag.shape[1] == 0:
            raise InvalidArgument("input must contain at least one frame")
        return mag.astype(self.dtype, copy=False), squeeze

    @staticmethod
    def _run_stack(xs, layers, keep):
        caches = []
        for p in layers:
            xs, _, c = lstm_layer_forward(xs, p, keep=keep)
            caches.append(c)
        return xs, caches

    def _back_stack(self, dhs, prefix, layers, caches, grads):
        for k in range(len(layers) - 1, -1, -1):
            dW, dU, db, dhs = lstm_layer_backward(dhs, layers[k], caches[k])
            name = f"{prefix}.lstm{k + 1}"
            grads[f"{name}.W"] = dW
            grads[f"{name}.U"] = dU
            grads[f"{name}.b"] = db
        return dhs

    @staticmethod
    def _step_stack(x, layers, states):
        for k, p in enumerate(layers):
            x, states[k] = lstm_cell(x, states[k], p)
        return x

    def _zero_states(self, layers, batch):
        return [LstmState.zeros(batch, p.hidden_dim, self.dtype) for p in layers]

    def __call__(self, mag, norm: str = "offline"):
        return self.forward(mag, norm=norm)[0]


def _mean_backward(d_norm, seq, mu, guarded):
    """Gradient of ``seq / mean(seq)`` w.r.t. ``seq`` (mean over the last two axes)."""
    n = seq.shape[-1] * seq.shape[-2]
    inner = np.sum(d_norm * seq, axis=(-2, -1), keepdims=True)
    corr = np.where(guarded, 0.0, inner / (mu * mu * n))
    return d_norm / mu - corr


class FullSubNet(Network):
    """Full-band LSTM stack + ReLU head feeding a shared per-frequency sub-band LSTM stack."""

    kind = "fullsubnet"

    @property
    def sub_width(self) -> int:
        return self.feat.input_width

    def __init__(
        self,
        n_bins: int = 257,
        n_neighbors: int = 15,
        full_hidden: int = 512,
        sub_hidden: int = 384,
        full_layers: int = 2,
        sub_layers: int = 2,
        tau: int = 2,
        crm: CrmConfig | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__(n_bins, tau, crm)
        self.feat = features.FeatureConfig(n_neighbors, n_bins)
        self.n_neighbors = n_neighbors
        self.full_hidden, self.sub_hidden = full_hidden, sub_hidden
        self.full_layers, self.sub_layers = full_layers, sub_layers
        rng = np.random.default_rng(seed)
        dims = [n_bins] + [full_hidden] * full_layers
        for k in range(full_layers):
            self._add_lstm(f"full.lstm{k + 1}", rng, dims[k], dims[k + 1], dtype)
        self._add_linear("full.head", rng, full_hidden, n_bins, dtype)
        dims = [self.feat.input_width] + [sub_hidden] * sub_layers
        for k in range(sub_layers):
            self._add_lstm(f"sub.lstm{k + 1}", rng, dims[k], dims[k + 1], dtype)
        self._add_linear("sub.head", rng, sub_hidden, 2, dtype)

    def config(self) -> dict:
        return dict(
            n_bins=self.n_bins,
            n_neighbors=self.n_neighbors,
            full_hidden=self.full_hidden,
            sub_hidden=self.sub_hidden,
            full_layers=self.full_layers,
            sub_layers=self.sub_layers,
            tau=self.tau,
        )

    @staticmethod
    def param_count_formula(n_bins, n_neighbors, full_hidden, sub_hidden, full_layers=2, sub_layers=2) -> int:
        total = lstm_param_count(n_bins, full_hidden)
        total += (full_layers - 1) * lstm_param_count(full_hidden, full_hidden)
        total += linear_param_count(full_hidden, n_bins)
        total += lstm_param_count(2 * n_neighbors + 2, sub_hidden)
        total += (sub_layers - 1) * lstm_param_count(sub_hidden, sub_hidden)
        total += linear_param_count(sub_hidden, 2)
        return total

    def full_band(self, mag_norm, keep=False):
        layers = self.stack("full", self.full_layers)
        fh, caches = self._run_stack(mag_norm, layers, keep)
        head = self.linear("full.head")
        fz = fh @ head.W.T + head.b
        return np.maximum(fz, 0), (layers, caches, fh, fz)

    def forward(self, mag, norm: str = "offline", keep: bool = False, stats=None):
        """Predict compressed masks ``(B, T, F, 2)``.

        ``stats`` optionally supplies precomputed ``(mu_full, mu_sub)`` for the
        offline mode, with shapes ``(B, 1, 1)`` and ``(B, F, 1, 1)``.
        """
        if norm not in NORM_MODES:
            raise InvalidArgument(f"norm must be one of {NORM_MODES}")
        if keep and norm != "offline":
            raise InvalidArgument("gradients are only supported with offline normalization")
        mag, squeeze = self._check_input(mag)
        B, T, F = mag.shape
        if stats is not None:
            mu_full = np.asarray(stats[0], mag.dtype).reshape(B, 1, 1)
        elif norm == "offline":
            mu_full = features.full_band_mean(mag)
        else:
            mu_full = features.cumulative_full_band_mean(mag)
        mu_full = mu_full.astype(mag.dtype, copy=False)
        fb, fcache = self.full_band(mag / mu_full, keep)
        sb = features.concat_full_band(features.subband_unfold(mag, self.n_neighbors), fb)
        if stats is not None:
            mu_sub = np.asarray(stats[1], mag.dtype).reshape(B, F, 1, 1)
        elif norm == "offline":
            mu_sub = features.subband_mean(sb)
        else:
            mu_sub = features.cumulative_subband_mean(sb)
        mu_sub = mu_sub.astype(mag.dtype, copy=False)
        sbn = (sb / mu_sub).reshape(B * F, T, -1)
        layers = self.stack("sub", self.sub_layers)
        sh, scaches = self._run_stack(sbn, layers, keep)
        head = self.linear("sub.head")
        out = (sh @ head.W.T + head.b).reshape(B, F, T, 2).transpose(0, 2, 1, 3)
        cache = None
        if keep:
            guarded = sb.mean(axis=(-2, -1), keepdims=True) < features.MEAN_FLOOR
            cache = (fcache, sb, mu_sub, guarded, layers, scaches, sh, (B, T, F))
        if squeeze:
            out = out[0]
        return out, cache

    def stats(self, mag):
        """Whole-clip ``(mu_full, mu_sub)`` for offline-normalized streaming."""
        mag, _ = self._check_input(mag)
        mu_full = features.full_band_mean(mag)
        fb, _ = self.full_band(mag / mu_full)
        sb = features.concat_full_band(features.subband_unfold(mag, self.n_neighbors), fb)
        return mu_full, features.subband_mean(sb)

    def init_states(self):
        return {
            "full": self._zero_states(self.stack("full", self.full_layers), 1),
            "sub": self._zero_states(self.stack("sub", self.sub_layers), self.n_bins),
        }

    def step(self, frame_mag, states, means=None, stats=None):
        """One frame ``(F,)`` -> compressed mask prediction ``(F, 2)``.

        Normalization uses ``stats`` (whole-clip means) when given, otherwise
        the running :class:`~fullsub.features.CumulativeMeans` ``means``.
        """
        mag = np.asarray(frame_mag, self.dtype)
        mu_full = stats[0] if stats is not None else means.update_full(mag)
        x = (mag / np.asarray(mu_full, self.dtype).reshape(()))[None]
        h = self._step_stack(x, self.stack("full", self.full_layers), states["full"])
        fb = np.maximum(linear(h, self.linear("full.head")), 0)[0]
        rows = np.concatenate([mag[features.circular_neighbors(self.n_bins, self.n_neighbors)], fb[:, None]], axis=1)
        mu_sub = stats[1] if stats is not None else means.update_sub(rows)
        rows = rows / np.asarray(mu_sub, self.dtype).reshape(-1, 1)
        h = self._step_stack(rows, self.stack("sub", self.sub_layers), states["sub"])
        return linear(h, self.linear("sub.head"))

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        (flayers, fcaches, fh, fz), sb, mu_sub, guarded, slayers, scaches, sh, (B, T, F) = cache
        grads = {}
        dout = np.asarray(dout, sh.dtype).reshape(B, T, F, 2).transpose(0, 2, 1, 3).reshape(B * F, T, 2)
        head = self.linear("sub.head")
        grads["sub.head.W"] = dout.reshape(-1, 2).T @ sh.reshape(B * F * T, -1)
        grads["sub.head.b"] = dout.reshape(-1, 2).sum(axis=0)
        dsh = dout @ head.W
        dsbn = self._back_stack(dsh, "sub", slayers, scaches, grads).reshape(sb.shape)
        dsb = _mean_backward(dsbn, sb, mu_sub, guarded)
        dfb = np.swapaxes(dsb[..., -1], -1, -2)  # (B, T, F)
        dfz = dfb * (fz > 0)
        head = self.linear("full.head")
        grads["full.head.W"] = dfz.reshape(-1, F).T @ fh.reshape(B * T, -1)
        grads["full.head.b"] = dfz.reshape(-1, F).sum(axis=0)
        self._back_stack(dfz @ head.W, "full", flayers, fcaches, grads)
        return {k: grads[k] for k in self.params}


class FullBandBaseline(Network):
    """Pure full-band model: stacked LSTM over whole spectra, linear head to 2F."""

    kind = "fullband"

    def __init__(self, n_bins=257, hidden=512, layers=3, tau=2, crm=None, seed=0, dtype=np.float32):
        super().__init__(n_bins, tau, crm)
        self.hidden, self.layers = hidden, layers
        rng = np.random.default_rng(seed)
        dims = [n_bins] + [hidden] * layers
        for k in range(layers):
            self._add_lstm(f"full.lstm{k + 1}", rng, dims[k], dims[k + 1], dtype)
        self._add_linear("full.head", rng, hidden, 2 * n_bins, dtype)

    def config(self) -> dict:
        return dict(n_bins=self.n_bins, hidden=self.hidden, layers=self.layers, tau=self.tau)

    def stats(self, mag):
        mag, _ = self._check_input(mag)
        mu = features.full_band_mean(mag)
        return mu, np.ones((mag.shape[0], self.n_bins, 1, 1), mag.dtype)

    @staticmethod
    def param_count_formula(n_bins, hidden, layers=3) -> int:
        return (
            lstm_param_count(n_bins, hidden)
            + (layers - 1) * lstm_param_count(hidden, hidden)
            + linear_param_count(hidden, 2 * n_bins)
        )

    def forward(self, mag, norm="offline", keep=False, stats=None):
        if norm not in NORM_MODES:
            raise InvalidArgument(f"norm must be one of {NORM_MODES}")
        mag, squeeze = self._check_input(mag)
        B, T, F = mag.shape
        if stats is not None:
            mu = np.asarray(stats[0], mag.dtype).reshape(B, 1, 1)
        elif norm == "offline":
            mu = features.full_band_mean(mag)
        else:
            mu = features.cumulative_full_band_mean(mag)
        mu = mu.astype(mag.dtype, copy=False)
        layers = self.stack("full", self.layers)
        h, caches = self._run_stack(mag / mu, layers, keep)
        out = self.linear("full.head")
        out = (h @ out.W.T + out.b).reshape(B, T, F, 2)
        cache = (layers, caches, h, (B, T, F)) if keep else None
        return (out[0] if squeeze else out), cache

    def init_states(self):
        return {"full": self._zero_states(self.stack("full", self.layers), 1)}

    def step(self, frame_mag, states, means=None, stats=None):
        mag = np.asarray(frame_mag, self.dtype)
        mu = stats[0] if stats is not None else means.update_full(mag)
        x = (mag / np.asarray(mu, self.dtype).reshape(()))[None]
        h = self._step_stack(x, self.stack("full", self.layers), states["full"])
        return linear(h, self.linear("full.head"))[0].reshape(self.n_bins, 2)

    def backward(self, dout, cache):
        layers, caches, h, (B, T, F) = cache
        d = np.asarray(dout, h.dtype).reshape(B * T, 2 * F)
        grads = {
            "full.head.W": d.T @ h.reshape(B * T, -1),
            "full.head.b": d.sum(axis=0),
        }
        dh = d.reshape(B, T, 2 * F) @ self.params["full.head.W"]
        self._back_stack(dh, "full", layers, caches, grads)
        return {k: grads[k] for k in self.params}


class SubBandBaseline(Network):
    """Pure sub-band model: shared per-frequency LSTM over 2N+1 magnitudes."""

    kind = "subband"

    @property
    def sub_width(self) -> int:
        return self.feat.unit_width

    def __init__(self, n_bins=257, n_neighbors=15, hidden=384, layers=2, tau=2, crm=None, seed=0, dtype=np.float32):
        super().__init__(n_bins, tau, crm)
        self.feat = features.FeatureConfig(n_neighbors, n_bins)
        self.n_neighbors, self.hidden, self.layers = n_neighbors, hidden, layers
        rng = np.random.default_rng(seed)
        dims = [self.feat.unit_width] + [hidden] * layers
        for k in range(layers):
            self._add_lstm(f"sub.lstm{k + 1}", rng, dims[k], dims[k + 1], dtype)
        self._add_linear("sub.head", rng, hidden, 2, dtype)

    def config(self) -> dict:
        return dict(n_bins=self.n_bins, n_neighbors=self.n_neighbors, hidden=self.hidden, layers=self.layers, tau=self.tau)

    @staticmethod
    def param_count_formula(n_neighbors, hidden, layers=2) -> int:
        return (
            lstm_param_count(2 * n_neighbors + 1, hidden)
            + (layers - 1) * lstm_param_count(hidden, hidden)
            + linear_param_count(hidden, 2)
        )

    def forward(self, mag, norm="offline", keep=False, stats=None):
        if norm not in NORM_MODES:
            raise InvalidArgument(f"norm must be one of {NORM_MODES}")
        mag, squeeze = self._check_input(mag)
        B, T, F = mag.shape
        units = features.subband_unfold(mag, self.n_neighbors)
        if stats is not None:
            mu = np.asarray(stats[1], mag.dtype).reshape(B, F, 1, 1)
        elif norm == "offline":
            mu = features.subband_mean(units)
        else:
            mu = features.cumulative_subband_mean(units)
        mu = mu.astype(mag.dtype, copy=False)
        layers = self.stack("sub", self.layers)
        h, caches = self._run_stack((units / mu).reshape(B * F, T, -1), layers, keep)
        head = self.linear("sub.head")
        out = (h @ head.W.T + head.b).reshape(B, F, T, 2).transpose(0, 2, 1, 3)
        cache = (layers, caches, h, (B, T, F)) if keep else None
        return (out[0] if squeeze else out), cache

    def init_states(self):
        return {"sub": self._zero_states(self.stack("sub", self.layers), self.n_bins)}

    def step(self, frame_mag, states, means=None, stats=None):
        mag = np.asarray(frame_mag, self.dtype)
        rows = mag[features.circular_neighbors(self.n_bins, self.n_neighbors)]
        if stats is not None:
            mu = stats[1]
        else:
            means.frames += 1
            mu = means.update_sub(rows)
        rows = rows / np.asarray(mu, self.dtype).reshape(-1, 1)
        h = self._step_stack(rows, self.stack("sub", self.layers), states["sub"])
        return linear(h, self.linear("sub.head"))

    def stats(self, mag):
        mag, _ = self._check_input(mag)
        return np.ones((mag.shape[0], 1, 1), mag.dtype), features.subband_mean(features.subband_unfold(mag, self.n_neighbors))

    def backward(self, dout, cache):
        layers, caches, h, (B, T, F) = cache
        d = np.asarray(dout, h.dtype).reshape(B, T, F, 2).transpose(0, 2, 1, 3).reshape(B * F, T, 2)
        grads = {
            "sub.head.W": d.reshape(-1, 2).T @ h.reshape(B * F * T, -1),
            "sub.head.b": d.reshape(-1, 2).sum(axis=0),
        }
        self._back_stack(d @ self.params["sub.head.W"], "sub", layers, caches, grads)
        return {k: grads[k] for k in self.params}


ARCHITECTURES = {cls.kind: cls for cls in (FullSubNet, FullBandBaseline, SubBandBaseline)}


def build(kind: str, **kwargs) -> Network:
    try:
        cls = ARCHITECTURES[kind]
    except KeyError:
        raise InvalidArgument(f"unknown model variant {kind!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(**kwargs)


def count_params(net: Network) -> int:
    return int(sum(v.size for v in net.params.values()))


# --- weight file ---------------------------------------------------------------
#
# magic "FSNW" | u16 version | u32 tensor count | per tensor:
#   u16 name length, UTF-8 name, u8 rank, u32 dims..., float32 LE data

MAGIC = b"FSNW"
VERSION = 1


def save_weights(net_or_params, path) -> None:
    params = net_or_params.params if isinstance(net_or_params, Network) else net_or_params
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_weight_file(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CorruptWeights(f"{path}: truncated at byte {pos}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CorruptWeights(f"{path}: bad magic")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CorruptWeights(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptWeights(f"{path}: tensor name is not UTF-8") from e
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CorruptWeights(f"{path}: {len(data) - pos} trailing bytes")
    return tensors


def load_weights(path, net: Network) -> Network:
    """Fill ``net`` with tensors from ``path``; names and shapes must agree exactly."""
    tensors = read_weight_file(path)
    expected = net.expected_shapes()
    for name, shape in expected.items():
        if name not in tensors:
            raise CorruptWeights(f"{path}: missing tensor {name}")
        if tensors[name].shape != shape:
            raise CorruptWeights(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}")
    extra = set(tensors) - set(expected)
    if extra:
        raise CorruptWeights(f"{path}: unexpected tensors {sorted(extra)}")
    dtype = net.dtype
    for name in expected:
        net.params[name] = tensors[name].astype(dtype)
    return net
