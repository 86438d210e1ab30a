"""Class activation maps and their fusion into a region-of-interest channel.

With global average pooling as the mean, the logit for class ``c`` is

    S_c = sum_m w[c, m] * mean_ij f_m(i, j) + b_c

so defining the map as ``cam_c(i, j) = (sum_m w[c, m] f_m(i, j) + b_c) / (H' W')``
makes its spatial sum equal ``S_c`` exactly. The ROI for a sample combines the
maps of all sub-models according to the bank's aggregated prediction ``P``.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .backbone import Backbone, forward
from .imaging import resize_bilinear, resize_nearest
from .ranking import SubModelBank, aggregate_bits

VARIANTS = ("standard", "swapped")


@dataclass
class Cam:
    values: np.ndarray
    source_model: int
    source_class: int
    grid: np.ndarray = field(repr=False, default=None)


@dataclass
class RoiMap:
    values: np.ndarray
    predicted: int
    contributions: List[Tuple[int, int, float]]
    variant: str = "standard"
    id: str = ""


def _require_cam_head(model: Backbone):
    if model.config.head != "gap_softmax":
        raise ValueError("class activation maps need a gap_softmax head (GAP feeding the softmax directly)")


def _grids_and_logits(model: Backbone, X: np.ndarray, classes: Sequence[int] = (0, 1)):
    _require_cam_head(model)
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    trace = forward(model, X, training=False)
    f = trace.activations.data.astype(np.float64)
    s = f.shape[-1]
    w = model.head_weight.data.astype(np.float64)[list(classes)]
    b = model.head_bias.data.astype(np.float64)[list(classes)]
    grids = np.einsum("cm,bmij->bcij", w, f) + b[None, :, None, None]
    return grids / (s * s), trace.logits.data


def cam_grids(model: Backbone, X: np.ndarray, classes: Sequence[int] = (0, 1)) -> np.ndarray:
    """Pre-upsampling maps ``[B, len(classes), s, s]`` for a batch."""
    return _grids_and_logits(model, X, classes)[0]


def upsample(grid: np.ndarray, size: int, mode: str = "bilinear") -> np.ndarray:
    s = grid.shape[-1]
    if mode == "nearest":
        if size % s:
            raise ValueError(f"nearest upsampling needs {size} divisible by {s}")
        return resize_nearest(grid, size // s).astype(np.float64)
    if mode == "bilinear":
        return resize_bilinear(grid, size, size)
    raise ValueError(f"unknown upsampling mode {mode!r}")


def compute_cam(model: Backbone, x: np.ndarray, cls: int, upsample_mode: str = "bilinear", k: int = 0) -> Cam:
    """Activation map of one image for class ``cls``, upsampled to the input size."""
    if not 0 <= cls < model.config.classes:
        raise ValueError(f"class {cls} outside the model's {model.config.classes} classes")
    grid = cam_grids(model, x, (cls,))[0, 0]
    return Cam(upsample(grid, model.config.input_size, upsample_mode), k, cls, grid)


def distance_weight(P: int, k: int, n_classes: int = None) -> Fraction:
    """Influence of sub-model ``k`` on the ROI of an interior prediction ``P``:
    ``1/(P-k+1)`` for ``k <= P`` and ``1/(k-P)`` otherwise."""
    if n_classes is not None:
        if not 1 <= P <= n_classes - 2:
            raise ValueError(f"distance weights are defined for interior P in 1..{n_classes - 2}, got {P}")
        if not 1 <= k <= n_classes - 1:
            raise ValueError(f"k={k} outside 1..{n_classes - 1}")
    elif P < 1 or k < 1:
        raise ValueError("P and k must be >= 1")
    return Fraction(1, P - k + 1) if k <= P else Fraction(1, k - P)


def roi_terms(P: int, n_classes: int, variant: str = "standard") -> List[Tuple[int, int, Fraction]]:
    """``(k, class, weight)`` triples that make up the ROI for prediction ``P``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown ROI variant {variant!r}")
    if not 0 <= P <= n_classes - 1:
        raise ValueError(f"P={P} outside 0..{n_classes - 1}")
    if P == 0:
        return [(1, 0, Fraction(1))]
    if P == n_classes - 1:
        return [(n_classes - 1, 1, Fraction(1))]
    low, high = (0, 1) if variant == "standard" else (1, 0)
    return [(k, low if k <= P else high, distance_weight(P, k, n_classes)) for k in range(1, n_classes)]


def znormalize(grid: np.ndarray) -> np.ndarray:
    """Zero mean, unit population variance; a constant grid maps to zeros."""
    g = np.asarray(grid, dtype=np.float64)
    std = g.std()
    centred = g - g.mean()
    # relative floor: rounding noise on a constant grid must not be amplified
    if std <= 1e-12 * max(1.0, float(np.abs(g).max())):
        return np.zeros_like(g)
    return centred / std


def merge_roi(cams: Mapping[Tuple[int, int], np.ndarray], P: int, n_classes: int,
              variant: str = "standard", normalize: bool = True) -> RoiMap:
    """Fuse ``cams[(k, class)]`` into the ROI for prediction ``P``."""
    terms = roi_terms(P, n_classes, variant)
    missing = [(k, c) for k, c, _ in terms if (k, c) not in cams]
    if missing:
        raise KeyError(f"missing activation maps for (k, class) = {missing}")
    total = None
    for k, c, wgt in terms:
        part = float(wgt) * np.asarray(cams[(k, c)], dtype=np.float64)
        total = part if total is None else total + part
    values = znormalize(total) if normalize else total
    return RoiMap(values, P, [(k, c, float(w)) for k, c, w in terms], variant)


def extract_rois(bank: SubModelBank, X: np.ndarray, ids: Sequence[str], variant: str = "standard",
                 upsample_mode: str = "bilinear", batch_size: int = 1, cache: "RoiCache" = None,
                 ) -> Dict[str, RoiMap]:
    """ROI for every image, selected by the bank's own aggregated prediction.

    Labels are never consulted. With a ``cache`` the results are looked up
    and stored by (id, bank hash, variant). The default ``batch_size`` of 1
    keeps every ROI bit-identical regardless of which other images are
    processed alongside it (BLAS results depend on the batch shape).
    """
    X = np.asarray(X)
    ids = list(ids)
    if len(ids) != len(X):
        raise ValueError("one id per image required")
    bank_hash = bank.content_hash() if cache is not None else ""
    out: Dict[str, RoiMap] = {}
    todo = []
    for i, sid in enumerate(ids):
        hit = cache.get(sid, bank_hash, variant) if cache is not None else None
        if hit is not None:
            out[sid] = hit
        else:
            todo.append(i)
    size = bank.config.input_size
    N = bank.n_classes
    for start in range(0, len(todo), batch_size):
        idx = todo[start:start + batch_size]
        xb = X[idx]
        grids, bits = [], []
        for m in bank.models:
            g, logits = _grids_and_logits(m, xb)
            grids.append(g)
            bits.append(logits.argmax(axis=1))
        P = aggregate_bits(np.stack(bits, axis=1))
        for j, i in enumerate(idx):
            terms = roi_terms(int(P[j]), N, variant)
            cams = {(k, c): upsample(grids[k - 1][j, c], size, upsample_mode) for k, c, _ in terms}
            roi = merge_roi(cams, int(P[j]), N, variant)
            roi.id = ids[i]
            out[ids[i]] = roi
            if cache is not None:
                cache.put(roi, size, bank_hash)
    return out


# -- cache ----------------------------------------------------------------------

ROI_MAGIC = b"OROI"
ROI_VERSION = 1


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def encode_roi(roi: RoiMap, size: int, bank_hash: str) -> bytes:
    """Binary ROI record.

    Header: magic ``OROI``, u32 version, then length-prefixed (u32) UTF-8 id,
    u32 size ``h``, i32 predicted class, length-prefixed variant and bank
    hash, u32 contribution count followed by (u32 k, u32 class, f64 weight)
    triples. Body: ``h*h`` little-endian float64 values, row-major.
    """
    def text(s: str) -> bytes:
        raw = s.encode("utf-8")
        return struct.pack("<I", len(raw)) + raw

    parts = [ROI_MAGIC, struct.pack("<I", ROI_VERSION), text(roi.id), struct.pack("<Ii", size, roi.predicted),
             text(roi.variant), text(bank_hash), struct.pack("<I", len(roi.contributions))]
    for k, c, w in roi.contributions:
        parts.append(struct.pack("<IId", k, c, w))
    values = np.asarray(roi.values, dtype="<f8")
    if values.shape != (size, size):
        raise ValueError(f"ROI grid {values.shape} does not match size {size}")
    parts.append(values.tobytes())
    return b"".join(parts)


def decode_roi(buf: bytes) -> Tuple[RoiMap, int, str]:
    try:
        return _decode_roi(buf)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ValueError(f"corrupt ROI record: {exc}") from exc


def _decode_roi(buf: bytes) -> Tuple[RoiMap, int, str]:
    if buf[:4] != ROI_MAGIC:
        raise ValueError("not an ROI record")
    pos = 4
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != ROI_VERSION:
        raise ValueError(f"unsupported ROI record version {version}")

    def text():
        nonlocal pos
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        s = buf[pos:pos + n].decode("utf-8")
        pos += n
        return s

    sid = text()
    size, predicted = struct.unpack_from("<Ii", buf, pos)
    pos += 8
    variant = text()
    bank_hash = text()
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    contributions = []
    for _ in range(count):
        k, c, w = struct.unpack_from("<IId", buf, pos)
        pos += 16
        contributions.append((k, c, w))
    if len(buf) != pos + 8 * size * size:
        raise ValueError("ROI record has the wrong length")
    values = np.frombuffer(buf, dtype="<f8", count=size * size, offset=pos).reshape(size, size).astype(np.float64)
    return RoiMap(values, predicted, contributions, variant, sid), size, bank_hash


class RoiCache:
    """One file per (sample id, bank hash, variant); entries are write-once."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, sid: str, bank_hash: str, variant: str) -> Path:
        return self.directory / f"{_safe(sid)}.{variant}.{bank_hash[:16]}.roi"

    def get(self, sid: str, bank_hash: str, variant: str) -> Optional[RoiMap]:
        p = self.path(sid, bank_hash, variant)
        if not p.exists():
            return None
        roi, _, stored_hash = decode_roi(p.read_bytes())
        if stored_hash != bank_hash or roi.id != sid or roi.variant != variant:
            return None
        return roi

    def put(self, roi: RoiMap, size: int, bank_hash: str):
        p = self.path(roi.id, bank_hash, roi.variant)
        if p.exists():
            return
        tmp = p.with_suffix(".tmp")
        tmp.write_bytes(encode_roi(roi, size, bank_hash))
        tmp.replace(p)

    def entries(self) -> Iterable[Path]:
        return sorted(self.directory.glob("*.roi"))

    def load_all(self, bank_hash: str = None, variant: str = None) -> Dict[str, RoiMap]:
        out = {}
        for p in self.entries():
            roi, _, h = decode_roi(p.read_bytes())
            if (bank_hash is None or h == bank_hash) and (variant is None or roi.variant == variant):
                out[roi.id] = roi
        return out


def roi_to_raster(values: np.ndarray) -> np.ndarray:
    """8-bit grayscale rendering; z-scores in [-3, 3] map linearly onto [0, 255]."""
    v = np.clip((np.asarray(values, dtype=np.float64) + 3.0) / 6.0, 0.0, 1.0)
    return np.round(v * 255).astype(np.uint8)
