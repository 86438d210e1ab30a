"""Random scalar functions of every differentiable op, for finite-difference checks."""

import numpy as np

from trkcnn.autograd import (BatchNormState, Tensor, batch_norm, conv2d, cross_entropy, dense, dropout,
                             global_average_pool, relu, softmax, stride2_pool)
from trkcnn.backbone import BackboneConfig, build, forward


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def op_cases(seed):
    """``{name: (fn, tensors)}``; each ``fn`` rebuilds its graph from the current tensor values."""
    rng = np.random.default_rng(seed)
    cases = {}
    x = T(rng.normal(size=(2, 2, 5, 5)))
    w = T(rng.normal(size=(3, 2, 3, 3)))
    b = T(rng.normal(size=3))
    cases["conv2d"] = (lambda: (conv2d(x, w, b) * conv2d(x, w, b)).sum(), {"x": x, "w": w, "b": b})
    p = T(rng.normal(size=(1, 2, 5, 6)))
    cases["maxpool"] = (lambda: (stride2_pool(p, "max") * stride2_pool(p, "max")).sum(), {"x": p})
    cases["avgpool"] = (lambda: (stride2_pool(p, "average") * stride2_pool(p, "average")).sum(), {"x": p})
    r = T(rng.normal(size=(3, 4)))
    cases["relu"] = (lambda: (relu(r) * relu(r)).sum(), {"x": r})
    g = T(rng.normal(size=(2, 3, 4, 4)))
    cases["gap"] = (lambda: (global_average_pool(g) * global_average_pool(g)).sum(), {"x": g})
    dx, dw, db = T(rng.normal(size=(3, 4))), T(rng.normal(size=(2, 4))), T(rng.normal(size=2))
    cases["dense"] = (lambda: (dense(dx, dw, db) * dense(dx, dw, db)).sum(), {"x": dx, "w": dw, "b": db})
    sz = T(rng.normal(size=(3, 4)))
    wts = rng.normal(size=(3, 4))
    cases["softmax"] = (lambda: (softmax(sz) * wts).sum(), {"z": sz})
    cz = T(rng.normal(size=(4, 3)))
    tg = rng.integers(0, 3, size=4)
    cases["cross_entropy"] = (lambda: cross_entropy(cz, tg), {"z": cz})
    bx, bg, bb = T(rng.normal(size=(4, 3, 2, 2))), T(rng.normal(size=3)), T(rng.normal(size=3))
    wb = rng.normal(size=(4, 3, 2, 2))
    cases["batch_norm"] = (lambda: (batch_norm(bx, bg, bb, BatchNormState.create(3), True) * wb).sum(),
                           {"x": bx, "gamma": bg, "beta": bb})
    state = BatchNormState(rng.normal(size=3), rng.uniform(0.5, 2, size=3))
    cases["batch_norm_eval"] = (lambda: (batch_norm(bx, bg, bb, state, False) * wb).sum(),
                                {"x": bx, "gamma": bg, "beta": bb})
    ox = T(rng.normal(size=(3, 5)))
    wo = rng.normal(size=(3, 5))
    mask_seed = int(rng.integers(1 << 30))
    # a fresh generator per call fixes the dropout mask across perturbations
    cases["dropout"] = (lambda: (dropout(ox, 0.4, True, np.random.default_rng(mask_seed)) * wo).sum(), {"x": ox})
    return cases


def backbone_case(seed):
    """Cross-entropy of a 4-stage batch-normalised backbone, checked against every parameter and the input."""
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(input_channels=1, input_size=16, stages=((3, 1), (3, 1), (2, 2), (2, 1)), dtype="float64")
    model = build(cfg, rng)
    x = T(rng.normal(size=(2, 1, 16, 16)))
    y = np.array([0, 1])
    tensors = dict(model.params)
    tensors["input"] = x
    return (lambda: cross_entropy(forward(model, x, training=True).logits, y)), tensors
