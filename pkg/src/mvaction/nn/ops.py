"""Differentiable operations used by the two networks.

Layout convention is channels-last: images are ``(n, h, w, c)`` and clips
``(n, t, h, w, c)``. Kernels are ``(*kernel_dims, c_in, c_out)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _finish(out, fn):
    if out.requires_grad:
        out._backward = fn
    return out


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, (a, b), "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _finish(out, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, (a, b), "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _finish(out, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), (x,), "relu")
    return _finish(out, lambda g: x.accumulate(g * mask))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = Tensor(s, (x,), "sigmoid")
    return _finish(out, lambda g: x.accumulate(g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, (x,), "tanh")
    return _finish(out, lambda g: x.accumulate(g * (1.0 - t * t)))


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    out = Tensor(data, (x,), "reshape")
    return _finish(out, lambda g: x.accumulate(g.reshape(src)))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = Tensor(data, tensors, "concat")

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _finish(out, backward)


def concat_channels(tensors) -> Tensor:
    """Concatenate along the trailing (channel) axis."""
    return concat(tensors, axis=-1)


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx], (x,), "slice")

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate(full)

    return _finish(out, backward)


def split(x: Tensor, n: int, axis: int = -1) -> list:
    size = x.shape[axis]
    if size % n:
        raise ShapeError(f"split: axis of length {size} not divisible into {n} parts")
    step = size // n
    return [slice_axis(x, i * step, (i + 1) * step, axis) for i in range(n)]


# ---------------------------------------------------------------------------
# reductions

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), (x,), "sum")
    return _finish(out, lambda g: x.accumulate(np.broadcast_to(g, x.shape)))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean(), (x,), "mean")
    return _finish(out, lambda g: x.accumulate(np.broadcast_to(g / n, x.shape)))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over every axis between batch and channel: ``(n, ..., c) -> (n, c)``."""
    axes = tuple(range(1, x.ndim - 1))
    count = int(np.prod([x.shape[a] for a in axes]))
    out = Tensor(x.data.mean(axis=axes), (x,), "gap")

    def backward(g):
        shape = (g.shape[0],) + (1,) * len(axes) + (g.shape[-1],)
        x.accumulate(np.broadcast_to(g.reshape(shape) / count, x.shape))

    return _finish(out, backward)


def avg_pool(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` mean pool over the two axes before channels.

    Trailing rows/columns that do not fill a whole window are dropped.
    """
    if x.ndim < 4:
        raise ShapeError(f"avg_pool expects (n, ..., h, w, c), got {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"avg_pool: window {size} larger than spatial dims {(h, w)}")
    lead = x.shape[:-3]
    c = x.shape[-1]
    crop = x.data[..., : ho * size, : wo * size, :]
    data = crop.reshape(*lead, ho, size, wo, size, c).mean(axis=(-4, -2))
    out = Tensor(data, (x,), "avg_pool")

    def backward(g):
        up = np.repeat(np.repeat(g, size, axis=-3), size, axis=-2) / (size * size)
        if up.shape == x.shape:
            x.accumulate(up)
        else:
            full = np.zeros_like(x.data)
            full[..., : ho * size, : wo * size, :] = up
            x.accumulate(full)

    return _finish(out, backward)


# ---------------------------------------------------------------------------
# linear layers

def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {W.shape}")
    data = x.data @ W.data
    parents = (x, W)
    if b is not None:
        if b.shape != (W.shape[1],):
            raise ShapeError(f"dense: bias {b.shape} does not match output width {W.shape[1]}")
        data = data + b.data
        parents = (x, W, b)
    out = Tensor(data, parents, "dense")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ W.data.T)
        if W.requires_grad:
            W.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return _finish(out, backward)


def _same_pad(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _correlate(xp, K, strides):
    """Valid cross-correlation of padded ``xp (n, *S, c)`` with ``K (*k, c, co)``."""
    nd = K.ndim - 2
    ks = K.shape[:nd]
    win = sliding_window_view(xp, ks, axis=tuple(range(1, nd + 1)))
    if any(s != 1 for s in strides):
        win = win[(slice(None),) + tuple(slice(None, None, s) for s in strides)]
    # win axes: n, *out, c, *k
    return np.tensordot(win, K, axes=(list(range(nd + 1, 2 * nd + 2)), [nd] + list(range(nd)))), win


def _conv(x: Tensor, K: Tensor, b, strides, pads, op) -> Tensor:
    nd = K.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeError(f"{op}: input rank {x.ndim} does not match kernel {K.shape}")
    if x.shape[-1] != K.shape[-2]:
        raise ShapeError(f"{op}: input channels {x.shape[-1]} != kernel in-channels {K.shape[-2]}")
    pad_width = [(0, 0)] + list(pads) + [(0, 0)]
    xp = np.pad(x.data, pad_width) if any(p != (0, 0) for p in pads) else x.data
    for axis, k in enumerate(K.shape[:nd]):
        if xp.shape[axis + 1] < k:
            raise ShapeError(f"{op}: kernel {K.shape[:nd]} larger than padded input {xp.shape[1:-1]}")
    data, win = _correlate(xp, K.data, strides)
    parents = (x, K)
    if b is not None:
        if b.shape != (K.shape[-1],):
            raise ShapeError(f"{op}: bias {b.shape} does not match out-channels {K.shape[-1]}")
        data = data + b.data
        parents = (x, K, b)
    out = Tensor(data, parents, op)

    def backward(g):
        if K.requires_grad:
            axes = list(range(nd + 1))
            dK = np.tensordot(win, g, axes=(axes, axes))  # (c, *k, co)
            K.accumulate(np.moveaxis(dK, 0, nd))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=tuple(range(nd + 1))))
        if x.requires_grad:
            ks = K.shape[:nd]
            gd = g
            if any(s != 1 for s in strides):
                shape = (g.shape[0],) + tuple((o - 1) * s + 1 for o, s in zip(g.shape[1:-1], strides)) + (g.shape[-1],)
                gd = np.zeros(shape)
                gd[(slice(None),) + tuple(slice(None, None, s) for s in strides)] = g
            full_pad = [(0, 0)] + [(k - 1, k - 1) for k in ks] + [(0, 0)]
            gp = np.pad(gd, full_pad)
            Kf = np.flip(K.data, axis=tuple(range(nd))).swapaxes(-1, -2)
            dxp, _ = _correlate(gp, Kf, (1,) * nd)
            tail = [(0, 0)] + [(0, P - D) for P, D in zip(xp.shape[1:-1], dxp.shape[1:-1])] + [(0, 0)]
            if any(t != (0, 0) for t in tail):
                dxp = np.pad(dxp, tail)
            crop = (slice(None),) + tuple(slice(lo, lo + s) for (lo, _), s in zip(pads, x.shape[1:-1])) + (slice(None),)
            x.accumulate(dxp[crop])

    return _finish(out, backward)


def conv2d(x: Tensor, K: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation. ``x (n, h, w, c)``, ``K (kh, kw, c, co)``."""
    if K.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (kh, kw, c, co), got {K.shape}")
    if padding == "same":
        pads = [_same_pad(x.shape[1 + i], K.shape[i], stride) for i in range(2)]
    elif padding == "valid":
        pads = [(0, 0), (0, 0)]
    else:
        raise ValueError(f"unknown padding {padding!r}")
    return _conv(x, K, b, (stride, stride), pads, "conv2d")


def conv3d(x: Tensor, K: Tensor, b: Tensor | None = None, padding=("valid", "same", "same")) -> Tensor:
    """Stride-1 3-D cross-correlation over ``(t, h, w)`` with per-axis padding."""
    if K.ndim != 5:
        raise ShapeError(f"conv3d: kernel must be (kt, kh, kw, c, co), got {K.shape}")
    pads = []
    for i, mode in enumerate(padding):
        if mode == "same":
            pads.append(_same_pad(x.shape[1 + i], K.shape[i], 1))
        elif mode == "valid":
            pads.append((0, 0))
        else:
            raise ValueError(f"unknown padding {mode!r}")
    return _conv(x, K, b, (1, 1, 1), pads, "conv3d")


def global_depthwise_conv(x: Tensor, K: Tensor, b: Tensor | None = None) -> Tensor:
    """Depthwise conv whose kernel covers the full spatial extent.

    ``x (n, h, w, c)`` with ``K (h, w, c)`` gives ``(n, 1, 1, c)``: one weighted
    spatial sum per channel.
    """
    if x.ndim != 4 or K.shape != x.shape[1:]:
        raise ShapeError(f"global_depthwise_conv: kernel {K.shape} must equal input spatial/channel dims {x.shape[1:]}")
    data = np.einsum("nhwc,hwc->nc", x.data, K.data)
    parents = (x, K)
    if b is not None:
        data = data + b.data
        parents = (x, K, b)
    n, c = data.shape
    out = Tensor(data.reshape(n, 1, 1, c), parents, "gdc")

    def backward(g):
        g2 = g.reshape(n, c)
        if x.requires_grad:
            x.accumulate(g2[:, None, None, :] * K.data)
        if K.requires_grad:
            K.accumulate(np.einsum("nc,nhwc->hwc", g2, x.data))
        if b is not None and b.requires_grad:
            b.accumulate(g2.sum(axis=0))

    return _finish(out, backward)


# ---------------------------------------------------------------------------
# normalisers and losses

def softmax(z: np.ndarray, axis=-1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_over_groups(x: Tensor) -> Tensor:
    """Softmax over the group axis of ``(..., M, C)``, separately for each channel."""
    if x.ndim < 2:
        raise ShapeError(f"softmax_over_groups expects (..., M, C), got {x.shape}")
    s = softmax(x.data, axis=-2)
    out = Tensor(s, (x,), "softmax_groups")

    def backward(g):
        x.accumulate(s * (g - (g * s).sum(axis=-2, keepdims=True)))

    return _finish(out, backward)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are 0-based class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy_loss: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - logsum
    out = Tensor(-logp.mean(), (logits,), "xent")

    def backward(g):
        p = softmax(logits.data, axis=1)
        p[np.arange(n), labels] -= 1.0
        logits.accumulate(g * p / n)

    return _finish(out, backward)
