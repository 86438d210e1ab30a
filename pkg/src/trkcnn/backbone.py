"""GAP-headed convolutional backbone.

Every stage is ``conv_count`` x (3x3 conv -> batch norm -> ReLU) followed by a
stride-2 max pool, so a network with ``l`` stages maps an ``h x h`` input to an
``h/2**l`` square grid. The head is either global average pooling feeding a
softmax directly (required for class activation maps) or GAP followed by a
stack of fully connected layers.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autograd import (
    BatchNormState,
    Tensor,
    batch_norm,
    checkpoint,
    conv2d,
    dense,
    dropout,
    global_average_pool,
    relu,
    softmax,
    stride2_pool,
)

HEADS = ("gap_softmax", "gap_fc_softmax")


@dataclass
class BackboneConfig:
    input_channels: int = 3
    input_size: int = 64
    stages: Tuple[Tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2), (64, 2))
    head: str = "gap_softmax"
    fc_widths: Tuple[int, ...] = ()
    dropout: float = 0.0
    classes: int = 2
    batch_norm: bool = True
    kernel_size: int = 3
    dtype: str = "float64"

    def __post_init__(self):
        self.stages = tuple((int(f), int(c)) for f, c in self.stages)
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        self.validate()

    def validate(self):
        if self.input_channels < 1 or self.input_size < 1:
            raise ValueError("input_channels and input_size must be positive")
        if not self.stages:
            raise ValueError("a backbone needs at least one stage")
        for filters, convs in self.stages:
            if filters < 1 or convs < 1:
                raise ValueError(f"invalid stage ({filters}, {convs})")
        if self.input_size % (2 ** self.pool_count) != 0:
            raise ValueError(
                f"input size {self.input_size} is not divisible by 2**{self.pool_count}; "
                "reduce the number of stages or change the input size"
            )
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.head == "gap_softmax" and self.fc_widths:
            raise ValueError("a gap_softmax head cannot have fully connected layers")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def pool_count(self) -> int:
        return len(self.stages)

    @property
    def feature_size(self) -> int:
        return self.input_size // (2 ** self.pool_count)

    @property
    def n_filters(self) -> int:
        return self.stages[-1][0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)

    def replace(self, **changes) -> "BackboneConfig":
        d = self.to_dict()
        d.update(changes)
        return BackboneConfig.from_dict(d)


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass (batched).

    ``activations`` is the last convolutional block output ``[B, n, s, s]``,
    ``features`` its global average ``[B, n]``.
    """

    activations: Tensor
    features: Tensor
    logits: Tensor
    probabilities: Tensor


class Backbone:
    def __init__(self, config: BackboneConfig):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.bn: "OrderedDict[str, BatchNormState]" = OrderedDict()

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    # -- layers ------------------------------------------------------------

    def conv_names(self) -> List[str]:
        return [f"stage{s}.conv{c}" for s, (_, convs) in enumerate(self.config.stages) for c in range(convs)]

    def fc_names(self) -> List[str]:
        return [f"fc{i}" for i in range(len(self.config.fc_widths))]

    @property
    def head_weight(self) -> Tensor:
        return self.params["head.weight"]

    @property
    def head_bias(self) -> Tensor:
        return self.params["head.bias"]

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- state -------------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((k, v.data.copy()) for k, v in self.params.items())
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean.copy()
            out[f"{name}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=self.dtype)
        for name, st in self.bn.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=self.dtype)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=self.dtype)

    def content_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for k, v in self.state_dict().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path):
        checkpoint.save(path, self.state_dict(), {"backbone": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "Backbone":
        arrays, side = checkpoint.load(path)
        model = build(BackboneConfig.from_dict(side["backbone"]), np.random.default_rng(0))
        model.load_state_dict(arrays)
        return model

    # -- forward -----------------------------------------------------------

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardTrace:
        return forward(self, x, training=training, rng=rng)

    __call__ = forward


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def build(config: BackboneConfig, rng: np.random.Generator) -> Backbone:
    """Initialise a backbone: He-normal kernels, zero biases, unit BN scale."""
    config.validate()
    model = Backbone(config)
    dt = np.dtype(config.dtype)
    k = config.kernel_size
    p = model.params
    c_in = config.input_channels
    for s, (filters, convs) in enumerate(config.stages):
        for c in range(convs):
            name = f"stage{s}.conv{c}"
            p[f"{name}.weight"] = Tensor(_he(rng, (filters, c_in, k, k), c_in * k * k, dt), requires_grad=True)
            if config.batch_norm:
                p[f"{name}.bn.gamma"] = Tensor(np.ones(filters, dt), requires_grad=True)
                p[f"{name}.bn.beta"] = Tensor(np.zeros(filters, dt), requires_grad=True)
                model.bn[f"{name}.bn"] = BatchNormState.create(filters, dt)
            else:
                p[f"{name}.bias"] = Tensor(np.zeros(filters, dt), requires_grad=True)
            c_in = filters
    d_in = c_in
    for i, width in enumerate(config.fc_widths):
        name = f"fc{i}"
        p[f"{name}.weight"] = Tensor(_he(rng, (width, d_in), d_in, dt), requires_grad=True)
        if config.batch_norm:
            p[f"{name}.bn.gamma"] = Tensor(np.ones(width, dt), requires_grad=True)
            p[f"{name}.bn.beta"] = Tensor(np.zeros(width, dt), requires_grad=True)
            model.bn[f"{name}.bn"] = BatchNormState.create(width, dt)
        else:
            p[f"{name}.bias"] = Tensor(np.zeros(width, dt), requires_grad=True)
        d_in = width
    p["head.weight"] = Tensor(_glorot(rng, config.classes, d_in, dt), requires_grad=True)
    p["head.bias"] = Tensor(np.zeros(config.classes, dt), requires_grad=True)
    for name, t in p.items():
        t.name = name
    return model


def _as_input(model: Backbone, x) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        arr = np.asarray(x, dtype=model.dtype)
        t = Tensor(arr[None] if arr.ndim == 3 else arr)
    cfg = model.config
    expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
    if t.ndim != 4 or t.shape[1:] != expected:
        raise ValueError(f"expected input of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], got {t.shape}")
    return t


def forward(model: Backbone, x, training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardTrace:
    """Run the network, keeping the last activations and GAP features."""
    cfg = model.config
    p = model.params
    h = _as_input(model, x)
    for s, (_, convs) in enumerate(cfg.stages):
        for c in range(convs):
            name = f"stage{s}.conv{c}"
            if cfg.batch_norm:
                h = conv2d(h, p[f"{name}.weight"], None, padding="same")
                h = batch_norm(h, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], model.bn[f"{name}.bn"], training)
            else:
                h = conv2d(h, p[f"{name}.weight"], p[f"{name}.bias"], padding="same")
            h = relu(h)
        h = stride2_pool(h, "max")
    activations = h
    features = global_average_pool(h)
    z = features
    for i in range(len(cfg.fc_widths)):
        name = f"fc{i}"
        if cfg.batch_norm:
            z = dense(z, p[f"{name}.weight"])
            z = batch_norm(z, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], model.bn[f"{name}.bn"], training)
        else:
            z = dense(z, p[f"{name}.weight"], p[f"{name}.bias"])
        z = relu(z)
        z = dropout(z, cfg.dropout, training, rng)
    logits = dense(z, p["head.weight"], p["head.bias"])
    return ForwardTrace(activations, features, logits, softmax(logits))


def predict(model: Backbone, x) -> np.ndarray:
    """Class index per sample; exact ties resolve to the lower index."""
    probs = forward(model, x, training=False).probabilities.data
    return probs.argmax(axis=1)


def predict_proba(model: Backbone, x, batch_size: int = 64) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    out = [forward(model, x[i:i + batch_size]).probabilities.data for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def transfer_weights(source: Backbone, target: Backbone) -> Backbone:
    """Copy a trained backbone into a wider-input (and possibly FC-headed) one.

    Input channels beyond the source's get zero first-layer kernels, so the
    target reproduces the source's trunk exactly when those channels are zero.
    A target with fully connected head layers keeps its own fresh head.
    """
    s, t = source.config, target.config
    if s.stages != t.stages or s.input_size != t.input_size or s.kernel_size != t.kernel_size:
        raise ValueError("transfer_weights: source and target trunks differ (stages, input size or kernel)")
    if s.batch_norm != t.batch_norm:
        raise ValueError("transfer_weights: batch-norm setting differs")
    if t.input_channels < s.input_channels:
        raise ValueError("transfer_weights: target has fewer input channels than source")
    same_head = s.head == t.head and s.fc_widths == t.fc_widths and s.classes == t.classes
    if t.head == "gap_softmax" and not same_head:
        raise ValueError("transfer_weights: gap_softmax target must match the source head")

    first = f"{target.conv_names()[0]}.weight"
    sstate = source.state_dict()
    tstate = target.state_dict()
    for name, value in sstate.items():
        head_part = name.startswith("head.") or name.startswith("fc")
        if head_part and not same_head:
            continue
        if name == first:
            w = np.zeros_like(tstate[name])
            w[:, :s.input_channels] = value
            tstate[name] = w
        else:
            tstate[name] = value
    target.load_state_dict(tstate)
    return target
