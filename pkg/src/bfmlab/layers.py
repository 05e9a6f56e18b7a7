"""Forward/backward primitives for channels-last tensors.

Every tensor is laid out ``(batch, freq, antenna, channel)``.  Each
``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
consumes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np


def same_padding(kernel: int) -> tuple[int, int]:
    """Split ``kernel - 1`` padding so the output keeps the input length."""
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _live_taps(kernel: int, length: int) -> tuple[int, int]:
    """Kernel taps that can touch real (non-padding) input on an axis of ``length``."""
    before = same_padding(kernel)[0]
    return max(0, before - (length - 1)), min(kernel, before + length)


def conv2d_forward(x, w, b):
    """Stride-1 'same' convolution.

    ``w`` has shape ``(kf, ka, c_in, c_out)``.  Antenna taps are unfolded
    into channels; frequency taps become row shifts of one contiguous
    ``(batch * padded_freq * antenna, ka * c_in)`` matrix, so every tap is a
    single BLAS call.  Rows that straddle two samples are computed and
    discarded.  Frequency taps that only ever see padding are skipped.
    """
    B, F, A, C = x.shape
    kf, ka, c_in, c_out = w.shape
    if C != c_in:
        raise ValueError(f"conv expects {c_in} input channels, got {C}")
    pa = same_padding(ka)
    i0, i1 = _live_taps(kf, F)
    before = same_padding(kf)[0] - i0
    k = i1 - i0
    Fp = F + k - 1
    xs = np.zeros((B, Fp, A, ka, C), dtype=x.dtype)
    for j in range(ka):
        lo, hi = max(0, pa[0] - j), min(A, A + pa[0] - j)
        xs[:, before:before + F, lo:hi, j, :] = x[:, :, lo + j - pa[0]:hi + j - pa[0], :]
    X = xs.reshape(B * Fp * A, ka * C)
    wr = w.reshape(kf, ka * C, c_out)
    n = (B * Fp - (k - 1)) * A
    full = np.empty((B * Fp * A, c_out), dtype=x.dtype)
    out = full[:n]
    np.matmul(X[:n], wr[i0], out=out)
    for i in range(1, k):
        out += X[i * A:i * A + n] @ wr[i0 + i]
    y = full.reshape(B, Fp, A, c_out)[:, :F]
    y += b
    return y, (X, x.shape, w)


def conv2d_backward(dy, cache, need_dx: bool = True):
    X, xshape, w = cache
    B, F, A, C = xshape
    kf, ka, c_in, c_out = w.shape
    pa = same_padding(ka)
    i0, i1 = _live_taps(kf, F)
    before = same_padding(kf)[0] - i0
    k = i1 - i0
    Fp = F + k - 1
    n = (B * Fp - (k - 1)) * A
    dfull = np.zeros((B, Fp, A, c_out), dtype=dy.dtype)
    dfull[:, :F] = dy
    D = dfull.reshape(-1, c_out)[:n]
    wr = w.reshape(kf, ka * C, c_out)
    dw = np.zeros_like(wr)
    db = dy.sum(axis=(0, 1, 2))
    for i in range(k):
        dw[i0 + i] = X[i * A:i * A + n].T @ D
    if not need_dx:
        return None, dw.reshape(w.shape), db
    dX = np.zeros_like(X)
    for i in range(k):
        dX[i * A:i * A + n] += D @ wr[i0 + i].T
    dxs = dX.reshape(B, Fp, A, ka, C)[:, before:before + F]
    dx = np.zeros(xshape, dtype=dy.dtype)
    for j in range(ka):
        lo, hi = max(0, pa[0] - j), min(A, A + pa[0] - j)
        dx[:, :, lo + j - pa[0]:hi + j - pa[0], :] += dxs[:, :, lo:hi, j, :]
    return dx, dw.reshape(w.shape), db


def conv_transpose2d_forward(x, w, b, stride: int = 2):
    """Transposed convolution upsampling frequency by ``stride``.

    The full (uncropped) output is cut back to ``(stride * F, A)``.
    """
    B, F, A, C = x.shape
    kf, ka, c_in, c_out = w.shape
    if C != c_in:
        raise ValueError(f"transposed conv expects {c_in} input channels, got {C}")
    wk = w.transpose(2, 0, 1, 3).reshape(c_in, kf * ka * c_out)
    P = (x.reshape(-1, c_in) @ wk).reshape(B, F, A, kf, ka, c_out)
    Ff = stride * (F - 1) + kf
    full = np.zeros((B, max(Ff, stride * F), A + ka - 1, c_out), dtype=x.dtype)
    span = stride * (F - 1) + 1
    for i in range(kf):
        for j in range(ka):
            full[:, i:i + span:stride, j:j + A, :] += P[:, :, :, i, j, :]
    cf = max(kf - stride, 0) // 2
    ca = (ka - 1) // 2
    y = full[:, cf:cf + stride * F, ca:ca + A, :] + b
    return y, (x, w, stride, cf, ca, full.shape)


def conv_transpose2d_backward(dy, cache):
    x, w, stride, cf, ca, fshape = cache
    B, F, A, c_in = x.shape
    kf, ka, _, c_out = w.shape
    db = dy.reshape(-1, c_out).sum(axis=0)
    dfull = np.zeros(fshape, dtype=dy.dtype)
    dfull[:, cf:cf + stride * F, ca:ca + A, :] = dy
    span = stride * (F - 1) + 1
    dP = np.empty((B, F, A, kf, ka, c_out), dtype=dy.dtype)
    for i in range(kf):
        for j in range(ka):
            dP[:, :, :, i, j, :] = dfull[:, i:i + span:stride, j:j + A, :]
    dP2 = dP.reshape(-1, kf * ka * c_out)
    x2 = x.reshape(-1, c_in)
    dwk = x2.T @ dP2
    dw = dwk.reshape(c_in, kf, ka, c_out).transpose(1, 2, 0, 3)
    wk = w.transpose(2, 0, 1, 3).reshape(c_in, kf * ka * c_out)
    dx = (dP2 @ wk.T).reshape(x.shape)
    return dx, np.ascontiguousarray(dw), db


# ---------------------------------------------------------------------------
# pointwise / routing
# ---------------------------------------------------------------------------


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def maxpool_freq_forward(x, size: int = 2):
    """Max-pool the frequency axis; ties go to the first index."""
    B, F, A, C = x.shape
    if F % size:
        raise ValueError(f"frequency length {F} not divisible by pool size {size}")
    xr = x.reshape(B, F // size, size, A, C)
    idx = xr.argmax(axis=2)
    y = np.take_along_axis(xr, idx[:, :, None], axis=2)[:, :, 0]
    return y, (idx, x.shape, size)


def maxpool_freq_backward(dy, cache):
    idx, xshape, size = cache
    B, F, A, C = xshape
    dxr = np.zeros((B, F // size, size, A, C), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[:, :, None], dy[:, :, None], axis=2)
    return dxr.reshape(xshape)


def dropout_forward(x, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; ``rng=None`` or ``rate=0`` is the identity."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def concat_forward(a, b):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(dy, split: int):
    return dy[..., :split], dy[..., split:]


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel batch norm.

    In train mode ``running_mean``/``running_var`` are updated in place.
    """
    axes = (0, 1, 2)
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma, train)


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    axes = (0, 1, 2)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# ConvLSTM scanned along frequency
# ---------------------------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def convlstm_forward(x, w, b):
    """One ConvLSTM layer with frequency bins as the time axis.

    ``x`` is ``(B, T, A, C)``; ``w`` is ``(1, ka, C + H, 4H)`` and the gate
    order along the last axis is input, forget, output, candidate.  Returns
    the hidden sequence ``(B, T, A, H)``.
    """
    B, T, A, C = x.shape
    H = w.shape[-1] // 4
    if w.shape[2] != C + H:
        raise ValueError(f"convlstm expects {w.shape[2] - H} input channels, got {C}")
    h = np.zeros((B, 1, A, H), dtype=x.dtype)
    c = np.zeros((B, 1, A, H), dtype=x.dtype)
    hs = np.empty((B, T, A, H), dtype=x.dtype)
    steps = []
    for t in range(T):
        z = np.concatenate([x[:, t:t + 1], h], axis=-1)
        pre, conv_cache = conv2d_forward(z, w, b)
        i = _sigmoid(pre[..., :H])
        f = _sigmoid(pre[..., H:2 * H])
        o = _sigmoid(pre[..., 2 * H:3 * H])
        g = np.tanh(pre[..., 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t:t + 1] = h
        steps.append((conv_cache, i, f, o, g, c_prev, tc))
    return hs, (steps, C, H)


def convlstm_backward(dhs, cache):
    steps, C, H = cache
    B, T, A, _ = dhs.shape
    conv_w = steps[0][0][2]
    dw = np.zeros_like(conv_w)
    db = np.zeros(4 * H, dtype=dhs.dtype)
    dx = np.empty((B, T, A, C), dtype=dhs.dtype)
    dh_next = np.zeros((B, 1, A, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, 1, A, H), dtype=dhs.dtype)
    for t in reversed(range(T)):
        conv_cache, i, f, o, g, c_prev, tc = steps[t]
        dh = dhs[:, t:t + 1] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dpre = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ], axis=-1)
        dz, dw_t, db_t = conv2d_backward(dpre, conv_cache)
        dw += dw_t
        db += db_t
        dx[:, t:t + 1] = dz[..., :C]
        dh_next = dz[..., C:]
        dc_next = dc * f
    return dx, dw, db


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def masked_mse(pred, label, mask):
    """Mean squared error over unmasked frequency bins.

    ``mask`` is ``(B, F)``; returns ``(loss, dloss/dpred)``.
    """
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} and label {label.shape} differ")
    m = np.asarray(mask, dtype=bool)[:, :, None, None]
    count = int(m.sum()) * pred.shape[2] * pred.shape[3]
    if count == 0:
        raise ValueError("every bin in the batch is masked")
    diff = np.where(m, pred - label, 0.0)
    loss = float((diff * diff).sum() / count)
    return loss, (2.0 / count) * diff.astype(pred.dtype)
