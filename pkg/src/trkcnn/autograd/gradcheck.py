"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .ops import record_kinks
from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def _signature(kinks):
    return [k.copy() for k in kinks]


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numerical_gradient(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5):
    """Return (numeric gradient, mask of coordinates free of kink crossings)."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    ok = np.ones(t.shape, dtype=bool)
    with record_kinks() as log:
        fn()
        base = _signature(log)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        with record_kinks() as log:
            flat[i] = orig + eps
            fp = float(fn().data)
            sig_p = _signature(log)
        with record_kinks() as log:
            flat[i] = orig - eps
            fm = float(fn().data)
            sig_m = _signature(log)
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2 * eps)
        if not (_same(sig_p, base) and _same(sig_m, base)):
            ok.reshape(-1)[i] = False
    return grad, ok


def gradcheck(fn: Callable[[], Tensor], tensors: Dict[str, Tensor], eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic and central-difference gradients of a scalar function.

    ``fn`` must rebuild the computation from the current values of
    ``tensors`` on every call (and be deterministic). The error for each
    tensor is ``||a - n|| / max(||a||, ||n||)`` over coordinates whose
    perturbation does not flip a ReLU sign or a max-pool route.
    """
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks require float64 tensors")
        t.grad = None
    fn().backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in tensors.items()}
    result = GradCheckResult(0.0)
    for name, t in tensors.items():
        num, ok = numerical_gradient(fn, t, eps)
        a, n = analytic[name][ok], num[ok]
        result.checked += int(ok.sum())
        result.skipped += int((~ok).sum())
        denom = max(np.linalg.norm(a), np.linalg.norm(n))
        # absolute floor: both sides at finite-difference noise level counts as agreement
        err = float(np.linalg.norm(a - n) / max(denom, 1e-6))
        result.per_tensor[name] = err
        result.max_rel_error = max(result.max_rel_error, err)
    return result
