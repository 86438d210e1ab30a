"""Region cropping, resizing, augmentation and ROI channel concatenation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

REGION_KINDS = ("disc", "edisc", "original")


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # bilinear weights with half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    m.setflags(write=False)
    return m


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int = None) -> np.ndarray:
    """Resize the last two axes of ``image`` with bilinear interpolation."""
    out_w = out_h if out_w is None else out_w
    H, W = image.shape[-2:]
    if (H, W) == (out_h, out_w):
        return np.array(image, dtype=np.float64)
    rows = _interp_matrix(H, out_h)
    cols = _interp_matrix(W, out_w)
    return rows @ np.asarray(image, dtype=np.float64) @ cols.T


def resize_nearest(image: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(image, factor, axis=-2), factor, axis=-1)


@dataclass(frozen=True)
class RegionSpec:
    kind: str = "disc"
    # e-disc margin in pixels; None means 25% of the disc box side
    expansion: Optional[float] = None

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region {self.kind!r}; expected one of {REGION_KINDS}")
        if self.expansion is not None and self.expansion < 0:
            raise ValueError("e-disc expansion must be non-negative")


def region_box(region: RegionSpec, box, height: int, width: int) -> Tuple[int, int, int, int]:
    """Crop rectangle ``(x0, y0, x1, y1)`` for a region of a ``height x width`` image."""
    if region.kind == "original":
        return 0, 0, width, height
    if box is None:
        raise ValueError(f"region {region.kind!r} needs a disc box")
    x0, y0, x1, y1 = (int(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate disc box {box}")
    if region.kind == "edisc":
        t = region.expansion
        if t is None:
            t = 0.25 * max(x1 - x0, y1 - y0)
        t = int(round(t))
        x0, y0, x1, y1 = x0 - t, y0 - t, x1 + t, y1 + t
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(width, x1), min(height, y1)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"disc box {box} lies outside the {width}x{height} image")
    return x0, y0, x1, y1


def preprocess(image: np.ndarray, region: RegionSpec, box, size: int) -> np.ndarray:
    """Crop ``region`` out of a channel-first image and resize it to ``size x size``.

    8-bit input is scaled to [0, 1].
    """
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    if img.ndim != 3:
        raise ValueError(f"expected a [C, H, W] image, got shape {img.shape}")
    x0, y0, x1, y1 = region_box(region, box, img.shape[1], img.shape[2])
    return resize_bilinear(img[:, y0:y1, x0:x1], size, size)


# -- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    zoom_range: float = 0.20
    shift_range: float = 0.20
    hflip: bool = True
    rotation_range: float = 45.0
    brightness_range: float = 0.40

    def __post_init__(self):
        for name in ("zoom_range", "shift_range", "rotation_range", "brightness_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.zoom_range >= 1 or self.brightness_range >= 1:
            raise ValueError("zoom_range and brightness_range must be below 1")

    @classmethod
    def none(cls) -> "AugmentPolicy":
        return cls(0.0, 0.0, False, 0.0, 0.0)


@dataclass(frozen=True)
class AugmentDraw:
    """One random realisation of a policy for one sample."""

    zoom: float
    shift_y: float
    shift_x: float
    flip: bool
    angle: float
    brightness: float

    @property
    def is_geometric_identity(self) -> bool:
        return self.zoom == 1.0 and self.shift_y == 0 and self.shift_x == 0 and not self.flip and self.angle == 0


def draw(policy: AugmentPolicy, size: int, rng: np.random.Generator) -> AugmentDraw:
    # always consume the same number of variates so streams stay aligned across policies
    u = rng.uniform(-1.0, 1.0, size=5)
    flip = rng.random() < 0.5
    return AugmentDraw(
        zoom=1.0 + u[0] * policy.zoom_range,
        shift_y=u[1] * policy.shift_range * size,
        shift_x=u[2] * policy.shift_range * size,
        flip=bool(flip and policy.hflip),
        angle=u[3] * policy.rotation_range,
        brightness=1.0 + u[4] * policy.brightness_range,
    )


def apply_geometric(channel: np.ndarray, d: AugmentDraw) -> np.ndarray:
    """Zoom, shift, flip and rotate one ``[h, w]`` grid about its centre; zero fill."""
    if d.is_geometric_identity:
        return np.array(channel, copy=True)
    h, w = channel.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    theta = np.deg2rad(d.angle)
    rot_inv = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])
    flip = np.diag([1.0, -1.0 if d.flip else 1.0])
    matrix = flip @ rot_inv / d.zoom
    offset = center - matrix @ (center + np.array([d.shift_y, d.shift_x]))
    return ndimage.affine_transform(channel, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def apply_draw(sample: np.ndarray, d: AugmentDraw, image_channels: int = 3) -> np.ndarray:
    """Apply one draw: geometry to every channel, brightness to image channels only."""
    out = np.stack([apply_geometric(c, d) for c in sample]).astype(sample.dtype, copy=False)
    if d.brightness != 1.0:
        k = min(image_channels, out.shape[0])
        out[:k] = np.clip(out[:k] * d.brightness, 0.0, 1.0)
    return out


def augment(sample: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator,
            image_channels: int = 3) -> np.ndarray:
    """Randomly transform a ``[C, h, h]`` sample (C = 3, or 4 with an ROI channel)."""
    return apply_draw(sample, draw(policy, sample.shape[-1], rng), image_channels)


def concat_roi(x: np.ndarray, roi: np.ndarray) -> np.ndarray:
    """Append ROI grid(s) as an extra channel: ``[3,h,h] + [h,h] -> [4,h,h]``
    (or the batched equivalent)."""
    x = np.asarray(x)
    roi = np.asarray(roi, dtype=x.dtype)
    if x.ndim == 3:
        if roi.shape != x.shape[1:]:
            raise ValueError(f"ROI shape {roi.shape} does not match image {x.shape[1:]}")
        return np.concatenate([x, roi[None]], axis=0)
    if x.ndim == 4:
        if roi.shape != (x.shape[0],) + x.shape[2:]:
            raise ValueError(f"ROI batch {roi.shape} does not match images {x.shape}")
        return np.concatenate([x, roi[:, None]], axis=1)
    raise ValueError(f"unsupported image shape {x.shape}")
