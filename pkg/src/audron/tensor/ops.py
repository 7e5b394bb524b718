"""Differentiable operators.

Every op takes Tensors (plus static arguments) and returns a Tensor whose
backward closure maps the output gradient to one gradient per tensor input.
Broadcasting is limited to bias-style patterns where the smaller operand
broadcasts into the larger one.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DimensionError, Tensor, make_result

__all__ = [
    "add", "sub", "mul", "scale", "sum", "mean", "reshape", "transpose",
    "matmul", "linear", "relu", "tanh", "sigmoid", "softmax", "log_softmax",
    "concat", "stack", "take", "conv1d", "conv_transpose1d", "conv2d",
    "maxpool2d", "avgpool1d", "batchnorm", "dropout", "lstm_cell",
    "cross_entropy", "mse_loss",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _bias_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    if a.shape == b.shape:
        return a.shape
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        out = None
    if out not in (a.shape, b.shape):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _bias_shape(a, b, "add")

    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _bias_shape(a, b, "sub")

    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _bias_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, b.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * a.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), back, "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D, batched 3-D @ 3-D, or 3-D @ shared 2-D."""
    ad, bd = a.data, b.data
    ok = (ad.ndim in (2, 3) and bd.ndim in (2, 3) and ad.shape[-1] == bd.shape[-2]
          and not (ad.ndim == 2 and bd.ndim == 3)
          and (ad.ndim == 2 or bd.ndim == 2 or ad.shape[0] == bd.shape[0]))
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if ad.ndim == 3 and bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_result(ad @ bd, (a, b), back, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x [N, in] @ w[out, in]^T + b[out]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    return make_result(out, parents, back, "linear")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = _softmax(a.data, axis)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), back, "log_softmax")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [t.shape for t in tensors]
    ax = axis % tensors[0].ndim
    for s in shapes[1:]:
        if len(s) != len(shapes[0]) or s[:ax] + s[ax + 1:] != shapes[0][:ax] + shapes[0][ax + 1:]:
            raise DimensionError(f"concat: incompatible shapes {shapes[0]} and {s} along axis {axis}")
    bounds = np.cumsum([0] + [s[ax] for s in shapes])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def back(g):
        return tuple(np.take(g, i, axis=ax) if t.requires_grad else None for i, t in enumerate(tensors))

    return make_result(out, tuple(tensors), back, "stack")


def take(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return make_result(a.data[index], (a,), back, "take")


# --- convolutions -----------------------------------------------------------

def _conv_out(n: int, k: int, stride: int, pad: int, op: str) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise DimensionError(f"{op}: input length {n} (pad {pad}) shorter than kernel {k}")
    return span // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0,
           pad_mode: str = "zeros") -> Tensor:
    """x [N, C, L], w [O, C, k] -> [N, O, L_out]; pad_mode "edge" replicates the boundary samples."""
    if pad_mode not in ("zeros", "edge"):
        raise ValueError(f"conv1d: unknown pad_mode {pad_mode!r}")
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    n, c, length = x.shape
    o, _, k = w.shape
    lo = _conv_out(length, k, stride, pad, "conv1d")
    mode = "edge" if pad_mode == "edge" else "constant"
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)), mode=mode) if pad else x.data
    win = sliding_window_view(xp, k, axis=2)[:, :, : stride * (lo - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, c * k, lo)
    w2 = w.data.reshape(o, c * k)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gw = (g @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(n, c, k, lo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j : j + stride * (lo - 1) + 1 : stride] += dcols[:, :, j]
            gx = gxp[:, :, pad : pad + length] if pad else gxp
            if pad and pad_mode == "edge":
                gx = gx.copy()
                gx[:, :, 0] += gxp[:, :, :pad].sum(axis=2)
                gx[:, :, -1] += gxp[:, :, pad + length :].sum(axis=2)
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2)) if b.requires_grad else None)

    return make_result(out, parents, back, "conv1d")


def conv_transpose1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of conv1d. x [N, C_in, L], w [C_in, C_out, k] -> [N, C_out, (L-1)*stride + k + output_padding]."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"conv_transpose1d: incompatible shapes {x.shape} and {w.shape}")
    if not 0 <= output_padding < max(stride, 1) + w.shape[2]:
        raise DimensionError(f"conv_transpose1d: output_padding {output_padding} out of range")
    n, ci, length = x.shape
    _, co, k = w.shape
    lout = (length - 1) * stride + k + output_padding
    w2 = w.data.reshape(ci, co * k)
    cols = (w2.T @ x.data).reshape(n, co, k, length)
    out = np.zeros((n, co, lout), dtype=x.dtype)
    for j in range(k):
        out[:, :, j : j + stride * (length - 1) + 1 : stride] += cols[:, :, j]
    if b is not None:
        out += b.data[:, None]
    xd = x.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        win = sliding_window_view(g, k, axis=2)[:, :, : stride * (length - 1) + 1 : stride]
        gcols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, co * k, length)
        gx = w2 @ gcols if x.requires_grad else None
        gw = (xd @ gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2)) if b.requires_grad else None)

    return make_result(out, parents, back, "conv_transpose1d")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """x [N, C, H, W], w [O, C, kh, kw] -> [N, O, H_out, W_out]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _conv_out(h, kh, stride, pad, "conv2d")
    wo = _conv_out(wd, kw, stride, pad, "conv2d")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    w2 = w.data.reshape(o, c * kh * kw)
    out = (w2 @ cols).reshape(n, o, ho, wo)
    if b is not None:
        out += b.data[:, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = (g2 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    return make_result(out, parents, back, "conv2d")


# --- pooling ----------------------------------------------------------------

def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Odd spatial dims are padded right by edge replication.

    Ties route the gradient to the first maximal element in row-major window order.
    """
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: expected [N, C, H, W], got {x.shape}")
    n, c, h, wd = x.shape
    ph, pw = h % 2, wd % 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge") if (ph or pw) else x.data
    quads = [xp[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def back(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        free = np.ones(out.shape, dtype=bool)
        for (i, j), q in zip(((0, 0), (0, 1), (1, 0), (1, 1)), quads):
            hit = free & (q == out)
            gxp[:, :, i::2, j::2] = g * hit
            free &= ~hit
        if ph:
            gxp[:, :, -2, :] += gxp[:, :, -1, :]
        if pw:
            gxp[:, :, :, -2] += gxp[:, :, :, -1]
        return (gxp[:, :, :h, :wd],)

    return make_result(out, (x,), back, "maxpool2d")


def avgpool1d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping mean pool over the last axis of [N, C, L]; pads right by replication."""
    if x.ndim != 3:
        raise DimensionError(f"avgpool1d: expected [N, C, L], got {x.shape}")
    n, c, length = x.shape
    extra = (-length) % k
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, extra)), mode="edge") if extra else x.data
    out = xp.reshape(n, c, -1, k).mean(axis=-1)

    def back(g):
        gxp = np.repeat(g / k, k, axis=-1)
        if extra:
            gxp[:, :, length - 1] += gxp[:, :, length:].sum(axis=-1)
        return (gxp[:, :, :length],)

    return make_result(out, (x,), back, "avgpool1d")


# --- normalization / regularization -----------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over axis 0 of [N, F]. Running buffers are updated in place in train mode."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm: incompatible shapes {x.shape}, {gamma.shape}, {beta.shape}")
    xd = x.data
    n = xd.shape[0]
    if training:
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    gd = gamma.data

    def back(g):
        gg = (g * xhat).sum(axis=0) if gamma.requires_grad else None
        gb = g.sum(axis=0) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                gx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                gx = dxhat * inv_std
        return gx, gg, gb

    return make_result(xhat * gd + beta.data, (x, gamma, beta), back, "batchnorm")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity outside training or when p == 0."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# --- recurrent ----------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """One LSTM step, gate order (input, forget, cell, output).

    Returns [N, 2H] holding the new hidden state followed by the new cell state.
    """
    hid = h.shape[1]
    if (x.ndim != 2 or w_ih.shape != (4 * hid, x.shape[1]) or w_hh.shape != (4 * hid, hid)
            or b.shape != (4 * hid,) or c.shape != h.shape or x.shape[0] != h.shape[0]):
        raise DimensionError(
            f"lstm_cell: incompatible shapes x{x.shape} h{h.shape} c{c.shape} "
            f"w_ih{w_ih.shape} w_hh{w_hh.shape} b{b.shape}")
    xd, hd, cd = x.data, h.data, c.data
    z = xd @ w_ih.data.T + hd @ w_hh.data.T + b.data
    i = _sigmoid(z[:, :hid])
    f = _sigmoid(z[:, hid : 2 * hid])
    gg = np.tanh(z[:, 2 * hid : 3 * hid])
    o = _sigmoid(z[:, 3 * hid :])
    c_new = f * cd + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def back(grad):
        dh = grad[:, :hid]
        dc = grad[:, hid:] + dh * o * (1 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1 - i),
            dc * cd * f * (1 - f),
            dc * i * (1 - gg * gg),
            dh * tc * o * (1 - o),
        ], axis=1)
        return (
            dz @ w_ih.data if x.requires_grad else None,
            dz @ w_hh.data if h.requires_grad else None,
            dc * f if c.requires_grad else None,
            dz.T @ xd if w_ih.requires_grad else None,
            dz.T @ hd if w_hh.requires_grad else None,
            dz.sum(axis=0) if b.requires_grad else None,
        )

    return make_result(np.concatenate([h_new, c_new], axis=1), (x, h, c, w_ih, w_hh, b), back, "lstm_cell")


# --- losses -------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1
        return (grad * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), back, "cross_entropy")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"mse_loss: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.data - target
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    return make_result(loss, (pred,), lambda g: (diff * (2.0 * g / diff.size),), "mse_loss")
