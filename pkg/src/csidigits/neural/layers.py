"""Forward/backward pairs for the layers the classifiers need.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns the input gradient
followed by parameter gradients. Arrays keep the dtype of their inputs.
"""
from __future__ import annotations

import enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BatchTooSmall, InvalidOneHot, KernelTooLarge, ShapeMismatch


class Mode(str, enum.Enum):
    TRAIN = "Train"
    EVAL = "Eval"


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ------------------------------------------------------------------ linear

def linear_forward(x, w, b):
    """y = x @ w + b with w of shape (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear expects width {w.shape[0]}, got {x.shape[-1]}")
    return x @ w + b, x


def linear_backward(dy, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


# -------------------------------------------------------------------- relu

def relu_forward(x, mode=Mode.TRAIN):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


# -------------------------------------------------------------------- lstm

LSTM_GATES = ("f", "i", "C", "o")


def lstm_forward(x, params, h0=None, c0=None):
    """Single-layer LSTM over x of shape (B, T, I) or (T, I).

    ``params`` maps ``W_f, W_i, W_C, W_o`` (each (H + I, H), acting on the
    concatenation [h_{t-1}, x_t]) and ``b_f, b_i, b_C, b_o`` (each (H,)).
    Returns (hidden sequence (B, T, H), (h_T, C_T)), cache.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, T, I = x.shape
    H = params["b_f"].shape[0]
    W = np.concatenate([params[f"W_{g}"] for g in LSTM_GATES], axis=1)
    if W.shape[0] != H + I:
        raise ShapeMismatch(f"LSTM weights expect input width {W.shape[0] - H}, got {I}")
    b = np.concatenate([params[f"b_{g}"] for g in LSTM_GATES])
    Wh, Wx = W[:H], W[H:]
    h = np.zeros((B, H), dtype=x.dtype) if h0 is None else h0
    c = np.zeros((B, H), dtype=x.dtype) if c0 is None else c0

    xw = (x.reshape(B * T, I) @ Wx).reshape(B, T, 4 * H) + b
    hs = np.empty((B, T, H), dtype=x.dtype)
    cs = np.empty((B, T, H), dtype=x.dtype)
    gates = np.empty((B, T, 4 * H), dtype=x.dtype)
    h_prev = np.empty((B, T, H), dtype=x.dtype)
    c_prev = np.empty((B, T, H), dtype=x.dtype)
    for t in range(T):
        h_prev[:, t] = h
        c_prev[:, t] = c
        z = xw[:, t] + h @ Wh
        f = sigmoid(z[:, :H])
        i = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H] = f
        gates[:, t, H:2 * H] = i
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
        hs[:, t] = h
        cs[:, t] = c
    cache = (x, Wh, Wx, gates, cs, h_prev, c_prev, squeeze)
    if squeeze:
        return (hs[0], (h[0], c[0])), cache
    return (hs, (h, c)), cache


def lstm_backward(dhs, cache, dh_last=None, dc_last=None):
    """Backpropagation through time.

    ``dhs`` is the gradient wrt every hidden output (may be None), ``dh_last``
    and ``dc_last`` gradients wrt the final state. Returns
    (dx, grads dict, dh0, dc0).
    """
    x, Wh, Wx, gates, cs, h_prev, c_prev, squeeze = cache
    B, T, I = x.shape
    H = Wh.shape[0]
    if dhs is None:
        dhs = np.zeros((B, T, H), dtype=x.dtype)
    elif squeeze:
        dhs = dhs[None]
    dh = np.zeros((B, H), dtype=x.dtype) if dh_last is None else np.array(dh_last).reshape(B, H)
    dc = np.zeros((B, H), dtype=x.dtype) if dc_last is None else np.array(dc_last).reshape(B, H)
    dz = np.empty((B, T, 4 * H), dtype=x.dtype)
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        f = gates[:, t, :H]
        i = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tc = np.tanh(cs[:, t])
        dh = dh + dhs[:, t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        df = dc * c_prev[:, t]
        di = dc * g
        dg = dc * i
        dzt = dz[:, t]
        dzt[:, :H] = df * f * (1 - f)
        dzt[:, H:2 * H] = di * i * (1 - i)
        dzt[:, 2 * H:3 * H] = dg * (1 - g * g)
        dzt[:, 3 * H:] = do * o * (1 - o)
        dWh += h_prev[:, t].T @ dzt
        dh = dzt @ Wh.T
        dc = dc * f
    dz2 = dz.reshape(B * T, 4 * H)
    dWx = x.reshape(B * T, I).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ Wx.T).reshape(B, T, I)
    dW = np.concatenate([dWh, dWx], axis=0)
    grads = {}
    for k, gname in enumerate(LSTM_GATES):
        grads[f"W_{gname}"] = dW[:, k * H:(k + 1) * H]
        grads[f"b_{gname}"] = db[k * H:(k + 1) * H]
    if squeeze:
        dx, dh, dc = dx[0], dh[0], dc[0]
    return dx, grads, dh, dc


def lstm_step(x_t, params, h, c):
    """One recurrence step; chaining T of these equals :func:`lstm_forward`."""
    (hs, (h1, c1)), _ = lstm_forward(x_t[:, None, :], params, h, c)
    return h1, c1


# ------------------------------------------------------------------ conv1d

def conv1d_forward(x, w, b=None):
    """Valid, stride-1 cross-correlation: y[o, t] = sum_c sum_k x[c, t + k] w[o, c, k].

    x is (B, C_in, L) or (C_in, L); w is (C_out, C_in, K).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, C, L = x.shape
    O, Cw, K = w.shape
    if Cw != C:
        raise ShapeMismatch(f"conv expects {Cw} input channels, got {C}")
    if K > L:
        raise KernelTooLarge(f"kernel {K} longer than input {L}")
    Lo = L - K + 1
    cols = sliding_window_view(x, K, axis=2)  # (B, C, Lo, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * Lo, C * K)
    y = cols @ w.reshape(O, C * K).T
    if b is not None:
        y = y + b
    y = y.reshape(B, Lo, O).transpose(0, 2, 1)
    y = np.ascontiguousarray(y)
    cache = (cols, x.shape, w, squeeze)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy, cache):
    cols, xshape, w, squeeze = cache
    if squeeze:
        dy = dy[None]
    B, C, L = xshape
    O, _, K = w.shape
    Lo = L - K + 1
    dy2 = dy.transpose(0, 2, 1).reshape(B * Lo, O)
    dw = (dy2.T @ cols).reshape(O, C, K)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(O, C * K)).reshape(B, Lo, C, K)
    dx = np.zeros(xshape, dtype=dy.dtype)
    for k in range(K):
        dx[:, :, k:k + Lo] += dcols[:, :, :, k].transpose(0, 2, 1)
    return (dx[0] if squeeze else dx), dw, db


# --------------------------------------------------------------- batchnorm

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode=Mode.TRAIN,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalisation over the batch (and length for (B, C, L) input).

    In Train mode the running statistics are updated in place (unbiased
    variance, momentum 0.1); Eval mode uses them unchanged.
    """
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if Mode(mode) is Mode.TRAIN:
        n = x.shape[0] if x.ndim == 2 else x.shape[0] * x.shape[2]
        if x.shape[0] < 2 and n < 2:
            raise BatchTooSmall("batchnorm in Train mode needs at least 2 values per channel")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(shape)) * inv.reshape(shape)
    y = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return y, (xhat, inv, gamma, axes, shape, Mode(mode))


def batchnorm_backward(dy, cache):
    xhat, inv, gamma, axes, shape, mode = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    if mode is Mode.EVAL:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    n = dy.size // dy.shape[1]
    dx = (inv.reshape(shape) / n) * (
        n * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


# ----------------------------------------------------------------- dropout

def dropout_forward(x, p, mode=Mode.TRAIN, rng: np.random.Generator | None = None):
    """Inverted dropout; identity in Eval mode or when p == 0."""
    if Mode(mode) is Mode.EVAL or p == 0:
        return x, None
    if rng is None:
        raise ValueError("dropout in Train mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# ----------------------------------------------------------- loss function

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes: int, dtype=np.float64):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def softmax_cross_entropy(logits, one_hot_labels):
    """Mean cross-entropy over the batch and its gradient wrt the logits."""
    y = np.asarray(one_hot_labels)
    if y.shape != logits.shape:
        raise InvalidOneHot(f"labels shape {y.shape} does not match logits {logits.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise InvalidOneHot("each label row must contain exactly one 1")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -float(np.sum(y * logp)) / B
    grad = (np.exp(logp) - y.astype(logits.dtype)) / logits.dtype.type(B)
    return loss, grad
