"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, b=None, padding="same"):
    """Direct cross-correlation over explicit loops; x [B,C,H,W], w [O,C,kh,kw]."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xp = np.zeros((B, C, H + kh - 1, W + kw - 1))
        xp[:, :, ph:ph + H, pw:pw + W] = x
    else:
        xp = x
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    out[n, o, i, j] = np.sum(xp[n, :, i:i + kh, j:j + kw] * w[o]) + (0 if b is None else b[o])
    return out


def pool_loops(x, mode="max"):
    B, C, H, W = x.shape
    Ho, Wo = math.ceil(H / 2), math.ceil(W / 2)
    out = np.zeros((B, C, Ho, Wo))
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    win = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                    out[n, c, i, j] = win.max() if mode == "max" else win.mean()
    return out


def recount(y_true, y_pred, positive, negative=0):
    """TP/FP/TN/FN for one positive class by scanning label pairs."""
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if t == positive and p == positive:
            tp += 1
        elif t == positive:
            fn += 1
        elif p == positive:
            fp += 1
        else:
            tn += 1
    neg_total = sum(1 for t in y_true if t == negative)
    neg_right = sum(1 for t, p in zip(y_true, y_pred) if t == negative and p == negative)
    return dict(tp=tp, fp=fp, fn=fn, tn=tn, neg_total=neg_total, neg_right=neg_right)


def adam_scalar(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = float(x0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def plateau_hand(losses, lr, patience, factor):
    """Learning rate after each call, by hand-written counter logic."""
    best, wait, out = math.inf, 0, []
    for loss in losses:
        if loss < best:
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= patience:
                lr *= factor
                wait = 0
        out.append(lr)
    return out


def cam_loops(f, w_c, b_c):
    """Class map from last activations f [n, s, s], weights w_c [n], bias b_c."""
    n, s, _ = f.shape
    cam = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            cam[i, j] = (sum(w_c[m] * f[m, i, j] for m in range(n)) + b_c) / (s * s)
    return cam
