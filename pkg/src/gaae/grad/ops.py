"""Differentiable primitives over `Tensor`.

Every function computes with plain numpy, then registers a closure on the
active tape returning one gradient (or None) per input. Convolutions run
through im2col + a single BLAS matmul; their data gradient is expressed as
another correlation so no scatter-add is needed on the hot path.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, ValidationError
from .tensor import Tensor, record

LOG_EPS = 1e-12  # clamp for log inside cross-entropy
SN_EPS = 1e-12   # sigma floor for spectral normalization


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / shape
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return record(out, (a, b), bwd)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, tuple(tensors), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return record(out, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return record(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    return record(a.data.T.copy(), (a,), lambda g: (g.T,))


def btranspose(a: Tensor) -> Tensor:
    """Swap the trailing two axes of a batched matrix."""
    if a.data.ndim != 3:
        raise DimensionError("btranspose expects a 3-D tensor")
    return record(np.ascontiguousarray(a.data.transpose(0, 2, 1)), (a,),
                  lambda g: (g.transpose(0, 2, 1),))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over matching leading batch dims."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise DimensionError("bmm expects 3-D operands")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise DimensionError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def bwd(g):
        return np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)

    return record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    raise ValidationError(f"unknown activation kind {kind!r}")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return ((g - dot) * p,)

    return record(p, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution & pooling
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N*Ho*Wo, C*kh*kw) patch matrix (copies)."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = v.shape[:4]
    return v.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), ho, wo


def _corr2d(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Plain cross-correlation used by both the forward pass and grad-x."""
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ w.reshape(co, -1).T
    return out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding, NCHW layout."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError("conv2d expects x (N,C,H,W) and w (Co,Ci,kh,kw)")
    n, c, h, wd = x.data.shape
    co, ci, kh, kw = w.data.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d needs stride >= 1 and padding >= 0")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise DimensionError("conv2d kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ w.data.reshape(co, -1).T
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    wd_data = w.data

    def bwd(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (gflat.T @ cols).reshape(wd_data.shape)
        # grad wrt input: full correlation of the (dilated) output gradient
        # with the flipped kernel, then crop away the forward padding.
        if stride > 1:
            gd = np.zeros((n, co, (ho - 1) * stride + 1, (wo - 1) * stride + 1),
                          dtype=g.dtype)
            gd[:, :, ::stride, ::stride] = g
        else:
            gd = g
        wflip = wd_data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx_full = _corr2d(gd, wflip, 1, 0) if kh == 1 and kw == 1 else \
            _corr2d(np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1))),
                    wflip, 1, 0)
        # pad tail for stride remainders, then crop to the unpadded input
        hp, wp = h + 2 * padding, wd + 2 * padding
        th = hp - gx_full.shape[2]
        tw = wp - gx_full.shape[3]
        if th or tw:
            gx_full = np.pad(gx_full, ((0, 0), (0, 0), (0, th), (0, tw)))
        gx = gx_full[:, :, padding:padding + h, padding:padding + wd]
        gb = None if bias is None else g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return record(out, inputs, bwd)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise DimensionError(f"maxpool2d needs dims divisible by {k}, got {h}x{w}")
    ho, wo = h // k, w // k
    win = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gw = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w),)

    return record(out, (x,), bwd)


def resample(x: Tensor, mode: str) -> Tensor:
    """'up2': nearest-neighbour doubling; 'down2': 2x2 mean pooling."""
    if x.data.ndim != 4:
        raise DimensionError("resample expects NCHW input")
    n, c, h, w = x.data.shape
    if mode == "up2":
        out = x.data.repeat(2, axis=2).repeat(2, axis=3)

        def bwd(g):
            return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

        return record(out, (x,), bwd)
    if mode == "down2":
        if h % 2 or w % 2:
            raise DimensionError(f"down2 needs even spatial dims, got {h}x{w}")
        out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

        def bwd(g):
            return ((g / 4.0).repeat(2, axis=2).repeat(2, axis=3),)

        return record(out, (x,), bwd)
    raise ValidationError(f"unknown resample mode {mode!r}")


def global_sum_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("global_sum_pool expects NCHW input")
    n, c, h, w = x.data.shape
    out = x.data.sum(axis=(2, 3))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None], (n, c, h, w)).copy(),)

    return record(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    h, w = x.data.shape[2], x.data.shape[3]
    return mul(global_sum_pool(x), 1.0 / float(h * w))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _norm_axes(x: np.ndarray) -> tuple:
    if x.ndim == 4:
        return (0, 2, 3)
    if x.ndim == 2:
        return (0,)
    raise DimensionError("batch norm expects NC or NCHW input")


def _bn_param_shape(x: np.ndarray) -> tuple:
    return (1, -1, 1, 1) if x.ndim == 4 else (1, -1)


def _bn_normalize(xd: np.ndarray, training: bool, running: dict | None,
                  momentum: float, eps: float):
    """Shared normalization core; returns (xhat, inv_std or None, mu, axes)."""
    axes = _norm_axes(xd)
    if xd.shape[0] == 0:
        raise DimensionError("batch norm on an empty batch")
    if training:
        m = np.prod([xd.shape[i] for i in axes])
        mu = xd.mean(axis=axes, keepdims=True)
        var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True)
        if running is not None:
            unbias = m / (m - 1) if m > 1 else 1.0
            running["mean"] *= 1.0 - momentum
            running["mean"] += momentum * mu.reshape(-1)
            running["var"] *= 1.0 - momentum
            running["var"] += momentum * unbias * var.reshape(-1)
    else:
        if running is None:
            raise ValidationError("eval-mode batch norm needs running stats")
        shape = _bn_param_shape(xd)
        mu = running["mean"].reshape(shape)
        var = running["var"].reshape(shape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    return xhat, inv_std, axes


def _bn_backward_xhat(gxhat: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray,
                      axes: tuple, training: bool) -> np.ndarray:
    if not training:
        return gxhat * inv_std
    m = np.prod([gxhat.shape[i] for i in axes])
    s1 = gxhat.sum(axis=axes, keepdims=True)
    s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
    return (inv_std / m) * (m * gxhat - s1 - xhat * s2)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: dict | None,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with a learned affine."""
    xd = x.data
    c = xd.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("batch_norm gamma/beta must match channel count")
    xhat, inv_std, axes = _bn_normalize(xd, training, running, momentum, eps)
    pshape = _bn_param_shape(xd)
    out = gamma.data.reshape(pshape) * xhat + beta.data.reshape(pshape)
    gd = gamma.data

    def bwd(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gd.reshape(pshape)
        gx = _bn_backward_xhat(gxhat, xhat, inv_std, axes, training)
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), bwd)


def _check_one_hot(y: np.ndarray, n_classes: int) -> None:
    if y.ndim != 2 or y.shape[1] != n_classes:
        raise ValidationError(f"condition must be (N,{n_classes}) one-hot, got {y.shape}")
    ok = np.all((y == 0.0) | (y == 1.0)) and np.all(y.sum(axis=1) == 1.0)
    if not ok:
        raise ValidationError("condition rows must be exact one-hot vectors")


def cond_batch_norm(x: Tensor, y: Tensor, gamma_table: Tensor, beta_table: Tensor,
                    running: dict | None, training: bool,
                    momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch norm whose affine is a per-class embedding selected by one-hot y.

    This is the only place a class condition enters the decoder.
    """
    xd = x.data
    c = xd.shape[1]
    n_classes = gamma_table.data.shape[0]
    if gamma_table.data.shape != (n_classes, c) or beta_table.data.shape != (n_classes, c):
        raise DimensionError("cBN embedding tables must be (n_classes, channels)")
    _check_one_hot(y.data, n_classes)
    if y.data.shape[0] != xd.shape[0]:
        raise DimensionError("cBN condition batch size mismatch")

    xhat, inv_std, axes = _bn_normalize(xd, training, running, momentum, eps)
    gam = y.data @ gamma_table.data   # (N, C)
    bet = y.data @ beta_table.data
    if xd.ndim == 4:
        out = gam[:, :, None, None] * xhat + bet[:, :, None, None]
    else:
        out = gam * xhat + bet
    yd = y.data

    def bwd(g):
        if g.ndim == 4:
            gsum = g.sum(axis=(2, 3))            # (N, C)
            gxsum = (g * xhat).sum(axis=(2, 3))
            gxhat = g * gam[:, :, None, None]
        else:
            gsum, gxsum, gxhat = g, g * xhat, g * gam
        g_gamma_table = yd.T @ gxsum
        g_beta_table = yd.T @ gsum
        gx = _bn_backward_xhat(gxhat, xhat, inv_std, axes, training)
        return gx, None, g_gamma_table, g_beta_table

    return record(out, (x, y, gamma_table, beta_table), bwd)


# ---------------------------------------------------------------------------
# spectral normalization
# ---------------------------------------------------------------------------

def spectral_normalize(w: Tensor, u: np.ndarray, iters: int = 1,
                       update: bool = True) -> Tensor:
    """Divide `w` by a power-iteration estimate of its largest singular value.

    `u` is a persistent buffer of shape (out_dim,), refreshed in place when
    `update` is true (one iteration per forward is the default). The backward
    pass holds u fixed, which is exact for sigma = ||W^T u||.
    """
    w2 = w.data.reshape(w.data.shape[0], -1)
    if u.shape != (w2.shape[0],):
        raise DimensionError(f"power-iteration vector must be ({w2.shape[0]},)")
    uv = u
    for _ in range(max(iters, 1) if update else 0):
        v = w2.T @ uv
        v_norm = np.linalg.norm(v)
        if v_norm < SN_EPS:
            return record(w.data.copy(), (w,), lambda g: (g,))
        v = v / v_norm
        uv = w2 @ v
        u_norm = np.linalg.norm(uv)
        if u_norm < SN_EPS:
            return record(w.data.copy(), (w,), lambda g: (g,))
        uv = uv / u_norm
    if update:
        u[...] = uv
    v = w2.T @ uv
    v_norm = np.linalg.norm(v)
    if v_norm < SN_EPS:
        return record(w.data.copy(), (w,), lambda g: (g,))
    v = v / v_norm
    sigma = float(uv @ (w2 @ v))
    if sigma < SN_EPS:
        return record(w.data.copy(), (w,), lambda g: (g,))
    out = w.data / sigma
    uvvt_shape = w.data.shape

    def bwd(g):
        inner = float((g * out).sum())
        guv = np.outer(uv, v).reshape(uvvt_shape)
        return ((g - inner * guv) / sigma,)

    return record(out, (w,), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target, pred)
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n)

    def bwd(g):
        gd = (2.0 / n) * diff * g
        return gd, -gd

    return record(out, (pred, target), bwd)


def softmax_cross_entropy(logits: Tensor, target_one_hot: Tensor) -> Tensor:
    """Mean over the batch of -sum(y * log softmax(logits))."""
    logits, target_one_hot = _as_tensor(logits), _as_tensor(target_one_hot, logits)
    if logits.data.shape != target_one_hot.data.shape:
        raise DimensionError("cross-entropy operands must share a shape")
    _check_one_hot(target_one_hot.data, logits.data.shape[1])
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = np.maximum(z - logsum, np.log(LOG_EPS))
    n = logits.data.shape[0]
    out = np.asarray(-(target_one_hot.data * logp).sum() / n)
    p = np.exp(z - logsum)
    td = target_one_hot.data

    def bwd(g):
        return (g * (p - td) / n, None)

    return record(out, (logits, target_one_hot), bwd)


def losses_primitive(x: Tensor, target: Tensor, kind: str) -> Tensor:
    if kind == "mse":
        return mse(x, target)
    if kind == "softmax_cross_entropy":
        return softmax_cross_entropy(x, target)
    raise ValidationError(f"unknown loss kind {kind!r}")
