"""Differentiable operations used by the convolutional backbone.

All image operations are batched: feature maps are ``[B, C, H, W]`` and
vectors are ``[B, D]``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

_kink_log = None


@contextlib.contextmanager
def record_kinks():
    """Collect the ReLU sign patterns and max-pool routes of every forward pass.

    Used by gradient checks to discard coordinates whose perturbation crosses
    a non-differentiable point.
    """
    global _kink_log
    previous = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


def _log_kink(arr):
    if _kink_log is not None:
        _kink_log.append(arr)


def _check_4d(x: Tensor, what: str):
    if x.ndim != 4:
        raise ValueError(f"{what} expects a [B, C, H, W] input, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, padding: str = "same") -> Tensor:
    """Stride-1 cross-correlation.

    ``padding="same"`` keeps the spatial extent (extra row/column of padding
    goes to the bottom/right for even kernels); ``"valid"`` uses no padding.
    """
    _check_4d(x, "conv2d")
    if weight.ndim != 4:
        raise ValueError(f"conv2d kernels must be [C_out, C_in, kh, kw], got {weight.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = weight.shape
    if Ck != C:
        raise ValueError(f"conv2d: input has {C} channels but kernels expect {Ck}")
    if bias is not None and bias.shape != (O,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {O} output channels")
    if padding == "same":
        pads = ((kh - 1) // 2, kh // 2, (kw - 1) // 2, kw // 2)
    elif padding == "valid":
        pads = (0, 0, 0, 0)
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    if kh > H + pads[0] + pads[1] or kw > W + pads[2] + pads[3]:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")

    # work channels-last: the im2col gather then reads contiguous channel runs
    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (pads[0], pads[1]), (pads[2], pads[3]), (0, 0)))
    Ho = xp.shape[1] - kh + 1
    Wo = xp.shape[2] - kw + 1
    # rows per output pixel, columns ordered (kh, kw, C)
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(O, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    # NCHW view over channels-last memory
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, kh, kw, C)
            gxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + Ho, j:j + Wo, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, pads[0]:pads[0] + H, pads[2]:pads[2] + W, :].transpose(0, 3, 1, 2)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def stride2_pool(x: Tensor, mode: str = "max") -> Tensor:
    """2x2 pooling with stride 2; odd extents are padded so output is ceil(H/2).

    Max pooling routes the gradient to the first maximum of each window in
    row-major order.
    """
    _check_4d(x, "stride2_pool")
    B, C, H, W = x.shape
    if H < 2 or W < 2:
        raise ValueError(f"stride2_pool needs spatial extents >= 2, got {H}x{W}")
    if mode not in ("max", "average"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    Hp, Wp = H + H % 2, W + W % 2
    if (Hp, Wp) == (H, W):
        xp = x.data
    else:
        xp = np.full((B, C, Hp, Wp), -np.inf if mode == "max" else 0.0, dtype=x.dtype)
        xp[:, :, :H, :W] = x.data
    offsets = ((0, 0), (0, 1), (1, 0), (1, 1))
    views = [xp[:, :, i::2, j::2] for i, j in offsets]

    if mode == "max":
        out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for v in views:
            m = (v == out) & ~taken
            taken |= m
            masks.append(m)
        if _kink_log is not None:
            _log_kink(np.argmax(np.stack(masks), axis=0))

        def backward(g):
            gxp = np.empty((B, C, Hp, Wp), dtype=g.dtype)
            for (i, j), m in zip(offsets, masks):
                gxp[:, :, i::2, j::2] = g * m
            return (gxp[:, :, :H, :W],)
    else:
        valid = np.zeros((Hp, Wp), dtype=x.dtype)
        valid[:H, :W] = 1.0
        count = valid.reshape(Hp // 2, 2, Wp // 2, 2).sum(axis=(1, 3))
        out = (views[0] + views[1] + views[2] + views[3]) / count

        def backward(g):
            share = np.repeat(np.repeat(g / count, 2, axis=2), 2, axis=3)
            return (share[:, :, :H, :W],)

    return Tensor._from_op(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_kink(mask)
    return Tensor._from_op(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def global_average_pool(x: Tensor) -> Tensor:
    """Spatial mean of every channel: ``[B, C, H, W] -> [B, C]``."""
    _check_4d(x, "global_average_pool")
    B, C, H, W = x.shape
    n = H * W

    def backward(g):
        return (np.broadcast_to((g / n)[:, :, None, None], x.shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped ``[d_out, d_in]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"dense: cannot apply weights {weight.shape} to input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"dense: bias {bias.shape} does not match {weight.shape[0]} outputs")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    if logits.shape[-1] < 2:
        raise ValueError("softmax needs at least two classes")
    s = _softmax_np(logits.data)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (logits,), backward)


def cross_entropy(logits: Tensor, targets, sample_weight=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    With ``sample_weight`` the mean is weighted: ``sum(w * nll) / sum(w)``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    B, c = logits.shape
    if targets.shape != (B,):
        raise ValueError(f"cross_entropy: {targets.shape[0]} targets for {B} rows")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(B), targets]
    w = np.ones(B, dtype=logits.dtype) if sample_weight is None else np.asarray(sample_weight, dtype=logits.dtype)
    total = w.sum()
    loss = np.asarray((w * nll).sum() / total, dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(B), targets] -= 1.0
        return (g * p * (w / total)[:, None],)

    return Tensor._from_op(loss, (logits,), backward)


@dataclass
class BatchNormState:
    """Running statistics of one batch-normalisation layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    initialized: bool = field(default=False)

    @classmethod
    def create(cls, channels: int, dtype=np.float64, momentum: float = 0.9, eps: float = 1e-5):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation of ``[B, C]`` or ``[B, C, H, W]`` input.

    Training mode normalises by the (biased) batch statistics and folds them
    into the running averages; eval mode uses the running averages.
    """
    if x.ndim not in (2, 4):
        raise ValueError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batch_norm: scale/shift must have shape ({C},)")
    g_ = gamma.data.reshape(bshape)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(state.running_mean.dtype)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(state.running_var.dtype)
        state.initialized = True
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
        n = x.data.size // C

        def backward(g):
            ggamma = (g * xhat).sum(axis=axes)
            gbeta = g.sum(axis=axes)
            gxhat = g * g_
            gx = (inv.reshape(bshape) / n) * (
                n * gxhat - gxhat.sum(axis=axes).reshape(bshape) - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
            return gx, ggamma, gbeta
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv.reshape(bshape)

        def backward(g):
            return g * g_ * inv.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (xhat * g_ + beta.data.reshape(bshape)).astype(x.dtype)
    return Tensor._from_op(out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator = None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))
