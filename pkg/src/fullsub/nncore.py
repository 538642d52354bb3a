"""Dense recurrent core in NumPy: stacked LSTM, linear layers, BPTT, Adam.

Shapes are batch-first: sequences are ``(B, T, D)``. Gate blocks are stored
in the order (input, forget, candidate, output) along the first axis of the
weight matrices, matching the serialized tensor layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from fullsub.errors import InvalidArgument, ShapeMismatch


def sigmoid(x):
    # tanh form is overflow-free and exact at 0
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0)


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, I)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def n_params(self) -> int:
        return self.W.size + self.U.size + self.b.size

    def check(self):
        h = self.hidden_dim
        if self.W.shape[0] != 4 * h or self.U.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ShapeMismatch(
                f"inconsistent LSTM tensors W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )


@dataclass
class LinearParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size


@dataclass
class LstmState:
    h: np.ndarray  # (B, H)
    c: np.ndarray  # (B, H)

    @classmethod
    def zeros(cls, batch: int, hidden: int, dtype=np.float64) -> "LstmState":
        return cls(np.zeros((batch, hidden), dtype), np.zeros((batch, hidden), dtype))

    def copy(self) -> "LstmState":
        return LstmState(self.h.copy(), self.c.copy())


def lstm_param_count(input_dim: int, hidden_dim: int) -> int:
    return 4 * (hidden_dim * (input_dim + hidden_dim) + hidden_dim)


def linear_param_count(in_dim: int, out_dim: int) -> int:
    return out_dim * in_dim + out_dim


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int, dtype=np.float32) -> LstmParams:
    """Uniform(+-1/sqrt(H)) weights, forget-gate bias 1, other biases 0."""
    k = 1.0 / np.sqrt(hidden_dim)
    W = rng.uniform(-k, k, (4 * hidden_dim, input_dim)).astype(dtype)
    U = rng.uniform(-k, k, (4 * hidden_dim, hidden_dim)).astype(dtype)
    b = np.zeros(4 * hidden_dim, dtype)
    b[hidden_dim : 2 * hidden_dim] = 1.0
    return LstmParams(W, U, b)


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float32) -> LinearParams:
    k = 1.0 / np.sqrt(in_dim)
    return LinearParams(
        rng.uniform(-k, k, (out_dim, in_dim)).astype(dtype),
        np.zeros(out_dim, dtype),
    )


def _gates(z: np.ndarray, hidden: int):
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden : 2 * hidden])
    g = np.tanh(z[..., 2 * hidden : 3 * hidden])
    o = sigmoid(z[..., 3 * hidden :])
    return i, f, g, o


def lstm_cell(x: np.ndarray, state: LstmState, p: LstmParams) -> tuple[np.ndarray, LstmState]:
    """One step of one layer. ``x`` is ``(B, I)`` or ``(I,)``."""
    if x.shape[-1] != p.input_dim or state.h.shape[-1] != p.hidden_dim:
        raise ShapeMismatch(
            f"input {x.shape} / hidden {state.h.shape} vs layer ({p.input_dim} -> {p.hidden_dim})"
        )
    z = x @ p.W.T + state.h @ p.U.T + p.b
    i, f, g, o = _gates(z, p.hidden_dim)
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return h, LstmState(h, c)


def linear(x: np.ndarray, p: LinearParams) -> np.ndarray:
    if x.shape[-1] != p.W.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} vs linear in_dim {p.W.shape[1]}")
    return x @ p.W.T + p.b


# --- sequence forward / backward ------------------------------------------------


@dataclass
class _LayerCache:
    xs: np.ndarray  # (T, B, I) time-major
    acts: np.ndarray  # (T, B, 4H) activated i, f, g, o
    cs: np.ndarray  # (T, B, H)
    tcs: np.ndarray  # (T, B, H) tanh(c)
    hs: np.ndarray  # (T, B, H)
    h0: np.ndarray
    c0: np.ndarray


def _gate_scale(H: int, dtype) -> np.ndarray:
    # sigmoid(z) = 0.5 + 0.5 tanh(z / 2): halve the i, f, o pre-activations so
    # one tanh covers all four gates
    s = np.full(4 * H, 0.5, dtype)
    s[2 * H : 3 * H] = 1.0
    return s


def lstm_layer_forward(xs: np.ndarray, p: LstmParams, state: LstmState | None = None, keep: bool = False):
    """Run one layer over ``xs`` (B, T, I). Returns ``(hs, final_state, cache)``."""
    B, T, I = xs.shape
    H = p.hidden_dim
    if I != p.input_dim:
        raise ShapeMismatch(f"sequence width {I} vs layer input_dim {p.input_dim}")
    if state is None:
        state = LstmState.zeros(B, H, xs.dtype)
    h, c = state.h, state.c
    scale = _gate_scale(H, p.W.dtype)
    UT = (p.U * scale[:, None]).T
    xt = np.ascontiguousarray(xs.transpose(1, 0, 2))
    xproj = xt @ (p.W * scale[:, None]).T + p.b * scale
    hs = np.empty((T, B, H), xs.dtype)
    acts = np.empty((T, B, 4 * H), xproj.dtype)
    cs = np.empty((T, B, H), xproj.dtype) if keep else None
    tcs = np.empty((T, B, H), xproj.dtype) if keep else None
    for t in range(T):
        a = acts[t]
        np.tanh(xproj[t] + h @ UT, out=a)
        ifo = a[:, : 2 * H]
        ifo *= 0.5
        ifo += 0.5
        o = a[:, 3 * H :]
        o *= 0.5
        o += 0.5
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        if keep:
            cs[t] = c
            tcs[t] = tc
    cache = _LayerCache(xt, acts, cs, tcs, hs, state.h, state.c) if keep else None
    return hs.transpose(1, 0, 2), LstmState(h, c), cache


def lstm_layer_backward(dhs: np.ndarray, p: LstmParams, cache: _LayerCache):
    """Reverse-mode pass through one layer; ``dhs`` is (B, T, H).

    Returns ``(dW, dU, db, dxs)``; the gradient w.r.t. the initial state is
    dropped because training always starts from zeros.
    """
    B, T, H = dhs.shape
    acts, cs, tcs = cache.acts, cache.cs, cache.tcs
    dht = dhs.transpose(1, 0, 2)
    # d act / d pre-activation for all steps at once
    deriv = acts * (1.0 - acts)
    g = acts[:, :, 2 * H : 3 * H]
    deriv[:, :, 2 * H : 3 * H] = 1.0 - g * g
    c_prev = np.concatenate([cache.c0[None], cs[:-1]], axis=0)
    dz_all = np.empty((T, B, 4 * H), dhs.dtype)
    dh_next = np.zeros((B, H), dhs.dtype)
    dc_next = np.zeros((B, H), dhs.dtype)
    U = p.U
    for t in range(T - 1, -1, -1):
        a = acts[t]
        tc = tcs[t]
        dh = dht[t] + dh_next
        dc = dh * a[:, 3 * H :]
        dc *= 1.0 - tc * tc
        dc += dc_next
        dz = dz_all[t]
        np.multiply(dc, a[:, 2 * H : 3 * H], out=dz[:, :H])
        np.multiply(dc, c_prev[t], out=dz[:, H : 2 * H])
        np.multiply(dc, a[:, :H], out=dz[:, 2 * H : 3 * H])
        np.multiply(dh, tc, out=dz[:, 3 * H :])
        dz *= deriv[t]
        dc_next = dc * a[:, H : 2 * H]
        dh_next = dz @ U
    flat_dz = dz_all.reshape(T * B, 4 * H)
    dW = flat_dz.T @ cache.xs.reshape(T * B, -1)
    h_prev = np.concatenate([cache.h0[None], cache.hs[:-1]], axis=0)
    dU = flat_dz.T @ h_prev.reshape(T * B, H)
    db = flat_dz.sum(axis=0)
    dxs = (dz_all @ p.W).transpose(1, 0, 2)
    return dW, dU, db, dxs


def lstm_sequence(xs: np.ndarray, layers: list[LstmParams], states: list[LstmState] | None = None):
    """Stacked unidirectional LSTM over ``xs``.

    ``xs`` may be ``(T, I)`` or ``(B, T, I)``. Returns the top layer's hidden
    sequence (same leading layout) and the list of final per-layer states, so
    a sequence can be continued chunk by chunk.
    """
    xs = np.asarray(xs)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[None]
    if xs.shape[1] == 0:
        raise InvalidArgument("sequence must contain at least one frame")
    if states is None:
        states = [None] * len(layers)
    out = xs
    finals = []
    for p, s in zip(layers, states):
        out, s, _ = lstm_layer_forward(out, p, s)
        finals.append(s)
    return (out[0] if squeeze else out), finals


# --- named-parameter utilities ---------------------------------------------------


def finite_diff_gradients(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    names=None,
    indices: Mapping[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences ``(f(p + d) - f(p - d)) / 2d`` for each scalar parameter.

    ``params`` is perturbed in place and restored. ``indices`` optionally
    restricts each tensor to a subset of flat positions (others left NaN).
    """
    if step <= 0:
        raise InvalidArgument("step must be positive")
    grads = {}
    for name in names or list(params):
        arr = params[name]
        flat = arr.reshape(-1)
        g = np.full(arr.size, np.nan if indices is not None else 0.0)
        todo = range(arr.size) if indices is None else indices.get(name, ())
        for k in todo:
            orig = flat[k]
            flat[k] = orig + step
            fp = f(params)
            flat[k] = orig - step
            fm = f(params)
            flat[k] = orig
            g[k] = (fp - fm) / (2.0 * step)
        grads[name] = g.reshape(arr.shape)
    return grads


def max_relative_error(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray], floor: float = 1e-12) -> float:
    """Worst per-tensor ``||a - b|| / max(||a||, ||b||)`` over shared finite entries.

    Norm-wise rather than element-wise: central differences carry an absolute
    rounding error of about ``eps * |f| / step``, which swamps entries whose
    gradient is near zero.
    """
    worst = 0.0
    for name in a:
        x = np.asarray(a[name], np.float64)
        y = np.asarray(b[name], np.float64)
        ok = np.isfinite(x) & np.isfinite(y)
        if not ok.any():
            continue
        x, y = x[ok], y[ok]
        den = max(np.linalg.norm(x), np.linalg.norm(y), floor)
        worst = max(worst, float(np.linalg.norm(x - y) / den))
    return worst


def adam_step(param, grad, m, v, t: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update. Returns new ``(param, m, v)``; inputs untouched."""
    if t < 1:
        raise InvalidArgument("Adam step index starts at 1")
    param = np.asarray(param)
    grad = np.asarray(grad)
    if grad.shape != param.shape or np.shape(m) != param.shape or np.shape(v) != param.shape:
        raise ShapeMismatch("parameter, gradient and moments must share a shape")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a dict of named tensors, updated in place."""

    def __init__(self, params: Mapping[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]):
        if set(grads) != set(params):
            raise ShapeMismatch("gradient names do not match parameter names")
        self.t += 1
        for k, p in params.items():
            new, self.m[k], self.v[k] = adam_step(
                p, grads[k], self.m[k], self.v[k], self.t, self.lr, self.beta1, self.beta2, self.eps
            )
            p[...] = new
