"""Parameterized layers, losses and the SGD update on top of :mod:`pitmix.tensor`.

The recurrent and loss ops are fused: each computes its forward pass in
numpy and registers one hand-written backward on the tape. ``lstm_step``
is the exception; it is composed from primitive ops and serves as an
independent reference for the fused sequence op.

Sequence tensors are laid out ``(B, T, D)``. An optional ``mask`` of shape
``(B, T)`` marks valid frames (1.0) versus batch padding (0.0); padded
frames never touch the recurrent state and contribute nothing to losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .tensor import (NonFiniteError, Tensor, add, as_tensor, concat, make_op,
                     matmul, mul, reshape, sigmoid, take, tanh)

INIT_SCALE = 0.05
FORGET_BIAS = 1.0


def _uniform(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True, name=name)


@dataclass
class LinearParams:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, prefix: str = "") -> "LinearParams":
        return cls(_uniform(rng, (d_in, d_out), prefix + "W"), _uniform(rng, (d_out,), prefix + "b"))

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        yield "W", self.W
        yield "b", self.b

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]


@dataclass
class LSTMParams:
    """Gate blocks are packed ``[input | forget | candidate | output]``."""

    Wx: Tensor
    Wh: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int, prefix: str = "") -> "LSTMParams":
        Wx = _uniform(rng, (d_in, 4 * hidden), prefix + "Wx")
        Wh = _uniform(rng, (hidden, 4 * hidden), prefix + "Wh")
        b = _uniform(rng, (4 * hidden,), prefix + "b")
        b.data[hidden:2 * hidden] = FORGET_BIAS
        return cls(Wx, Wh, b)

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        yield "Wx", self.Wx
        yield "Wh", self.Wh
        yield "b", self.b

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @property
    def d_in(self) -> int:
        return self.Wx.shape[0]


@dataclass
class BiLSTMParams:
    fwd: LSTMParams
    bwd: LSTMParams

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int, prefix: str = "") -> "BiLSTMParams":
        return cls(LSTMParams.init(rng, d_in, hidden, prefix + "fwd."),
                   LSTMParams.init(rng, d_in, hidden, prefix + "bwd."))

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        for direction, p in (("fwd", self.fwd), ("bwd", self.bwd)):
            for name, t in p.named():
                yield f"{direction}.{name}", t


def linear(x, p: LinearParams) -> Tensor:
    """Row-wise affine map ``x @ W + b`` over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != p.d_in:
        raise ValueError(f"linear expects last dim {p.d_in}, got {x.shape}")
    W, b = p.W.data, p.b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        return g @ W.T, x.data.reshape(-1, x.shape[-1]).T @ g2, g2.sum(axis=0)

    return make_op(x.data @ W + b, (x, p.W, p.b), backward, "linear")


def lstm_step(x_t, state: Tuple[Tensor, Tensor], p: LSTMParams) -> Tuple[Tensor, Tensor]:
    """One LSTM cell update built from primitive ops. Returns ``(h', c')``."""
    x_t = as_tensor(x_t)
    h, c = as_tensor(state[0]), as_tensor(state[1])
    H = p.hidden
    if x_t.shape[-1] != p.d_in or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError("lstm_step width mismatch")
    z = add(add(matmul(x_t, p.Wx), matmul(h, p.Wh)), p.b)
    i = sigmoid(take(z, 0, H))
    f = sigmoid(take(z, H, 2 * H))
    g = tanh(take(z, 2 * H, 3 * H))
    o = sigmoid(take(z, 3 * H, 4 * H))
    c_new = add(mul(f, c), mul(i, g))
    return mul(o, tanh(c_new)), c_new


def _sig(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_sequence(x, p: LSTMParams, mask: Optional[np.ndarray] = None,
                  reverse: bool = False) -> Tensor:
    """Run one LSTM direction over ``x`` of shape (B, T, D); zero initial state.

    Full backpropagation through time. With ``reverse=True`` the scan runs
    right to left and the output stays aligned with the input frames.
    """
    x = as_tensor(x)
    if x.data.ndim != 3 or x.shape[2] != p.d_in:
        raise ValueError(f"lstm_sequence expects (B, T, {p.d_in}), got {x.shape}")
    B, T, _ = x.shape
    H = p.hidden
    Wh = p.Wh.data
    xw = x.data @ p.Wx.data + p.b.data
    m = None if mask is None else np.asarray(mask, dtype=np.float64)[:, :, None]

    hp = np.empty((B, T, H))
    cp = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    out = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        hp[:, t] = h
        cp[:, t] = c
        z = xw[:, t] + h @ Wh
        a = gates[:, t]
        a[:, :2 * H] = _sig(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sig(z[:, 3 * H:])
        c_new = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c_new)
        tcs[:, t] = tc
        h_new = a[:, 3 * H:] * tc
        if m is None:
            out[:, t] = h_new
            h, c = h_new, c_new
        else:
            mt = m[:, t]
            out[:, t] = mt * h_new
            h = mt * h_new + (1.0 - mt) * h
            c = mt * c_new + (1.0 - mt) * c

    def backward(gout):
        dZ = np.empty((B, T, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        WhT = Wh.T
        for t in reversed(order):
            a = gates[:, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = tcs[:, t]
            if m is None:
                dh_new = gout[:, t] + dh
                dc_new = dc + dh_new * o * (1.0 - tc * tc)
            else:
                mt = m[:, t]
                dh_new = mt * (gout[:, t] + dh)
                dc_new = mt * dc + dh_new * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :H] = dc_new * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc_new * cp[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc_new * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh_new * tc * o * (1.0 - o)
            if m is None:
                dh = dz @ WhT
                dc = dc_new * f
            else:
                dh = (1.0 - mt) * dh + dz @ WhT
                dc = (1.0 - mt) * dc + dc_new * f
        dZ2 = dZ.reshape(-1, 4 * H)
        dx = dZ @ p.Wx.data.T
        dWx = x.data.reshape(-1, x.shape[2]).T @ dZ2
        dWh = hp.reshape(-1, H).T @ dZ2
        return dx, dWx, dWh, dZ2.sum(axis=0)

    return make_op(out, (x, p.Wx, p.Wh, p.b), backward, "lstm")


def bidi_layer(x, p: BiLSTMParams, mask: Optional[np.ndarray] = None) -> Tensor:
    """Bidirectional layer: (B, T, D) -> (B, T, 2H), forward block first."""
    x = as_tensor(x)
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    fw = lstm_sequence(x, p.fwd, mask, reverse=False)
    bw = lstm_sequence(x, p.bwd, mask, reverse=True)
    y = concat([fw, bw], axis=-1)
    return reshape(y, y.shape[1:]) if squeeze else y


def log_softmax_array(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_array(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def check_labels(labels: np.ndarray, num_labels: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_labels):
        raise ValueError(f"label ids must lie in [0, {num_labels})")
    return labels.astype(np.int64)


def softmax_ce(logits, labels, mask: Optional[np.ndarray] = None,
               reduction: str = "mean") -> Tensor:
    """Cross entropy of ``labels`` under ``softmax(logits)``.

    ``reduction`` is ``"mean"`` over (valid) frames or ``"sum"``.
    """
    logits = as_tensor(logits)
    L = logits.shape[-1]
    labels = check_labels(labels, L)
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    logp = log_softmax_array(logits.data)
    nll = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    w = np.ones(labels.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if reduction == "mean":
        denom = w.sum()
    elif reduction == "sum":
        denom = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        d = np.exp(logp)
        np.put_along_axis(d, labels[..., None],
                          np.take_along_axis(d, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (d * (w * (float(g) / denom))[..., None],)

    return make_op(np.sum(w * nll) / denom, (logits,), backward, "softmax_ce")


def mse(a, b, mask: Optional[np.ndarray] = None) -> Tensor:
    """Sum over frames of the squared Euclidean distance between rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    w = None if mask is None else np.asarray(mask, dtype=np.float64)[..., None]
    val = np.sum(diff * diff) if w is None else np.sum(w * diff * diff)

    def backward(g):
        d = 2.0 * float(g) * diff
        if w is not None:
            d = d * w
        return d, -d

    return make_op(val, (a, b), backward, "mse")


def cmvn_op(x, mask: Optional[np.ndarray] = None, min_var: float = 1e-10) -> Tensor:
    """Differentiable per-utterance CMVN over the valid frames of (B, T, D).

    Dimensions with variance below ``min_var`` are only mean-subtracted.
    Padded frames come out as zeros.
    """
    x = as_tensor(x)
    X = x.data
    B, T, D = X.shape
    m = np.ones((B, T, 1)) if mask is None else np.asarray(mask, dtype=np.float64)[:, :, None]
    n = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    mu = (m * X).sum(axis=1, keepdims=True) / n
    u = m * (X - mu)
    var = (u * u).sum(axis=1, keepdims=True) / n
    ok = var >= min_var
    sd = np.where(ok, np.sqrt(np.where(ok, var, 1.0)), 1.0)
    y = u / sd

    def backward(g):
        gm = m * g
        gbar = gm.sum(axis=1, keepdims=True) / n
        gy = (gm * y).sum(axis=1, keepdims=True) / n
        d = np.where(ok, (gm - m * gbar - y * gy) / sd, gm - m * gbar)
        return (d,)

    return make_op(y, (x,), backward, "cmvn")


class GradientError(NonFiniteError):
    """Raised when an update step sees a non-finite gradient."""


def sgd_step(params: List[Tensor], grads: List[Optional[np.ndarray]], lr: float, clip: float,
             clip_mode: str = "element", momentum: float = 0.0,
             velocity: Optional[Dict[str, np.ndarray]] = None):
    """Clip then descend: ``p <- p - lr * clip(g)`` for every parameter in place.

    ``clip_mode="element"`` clamps each gradient entry to [-clip, clip];
    ``"norm"`` rescales the concatenated gradient to norm at most ``clip``.
    A non-finite gradient aborts the step before any parameter moves.
    """
    if lr < 0 or clip <= 0:
        raise ValueError("need lr >= 0 and clip > 0")
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for {p.name or 'parameter'}")
    if clip_mode == "element":
        grads = [np.clip(g, -clip, clip) for g in grads]
    elif clip_mode == "norm":
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if total > clip:
            grads = [g * (clip / total) for g in grads]
    else:
        raise ValueError(f"unknown clip mode {clip_mode!r}")
    for p, g in zip(params, grads):
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            v = velocity.get(p.name)
            v = g.copy() if v is None else momentum * v + g
            velocity[p.name] = v
            g = v
        p.data -= lr * g


def param_count(params: Iterable[Tensor]) -> int:
    seen = set()
    n = 0
    for t in params:
        if id(t) not in seen:
            seen.add(id(t))
            n += t.data.size
    return n
