"""Synthetic ordinal fundus-like images, manifests and stratified splits.

Each synthetic image is a noisy background with a bright optic-disc-like
circle and a darker concentric cup. The cup-to-disc radius ratio follows a
per-class schedule that increases with the class index, so labels carry an
ordinal structure by construction.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from sklearn.model_selection import train_test_split

logger = logging.getLogger(__name__)

Box = Tuple[int, int, int, int]
MANIFEST_COLUMNS = ["id", "path", "label", "x0", "y0", "x1", "y1"]


@dataclass
class SynthSpec:
    n_classes: int = 3
    per_class: int = 200
    image_size: int = 128
    disc_radius: float = 0.18
    cdr_schedule: Tuple[float, ...] = (0.30, 0.55, 0.80)
    ratio_jitter: float = 0.06
    radius_jitter: float = 0.10
    position_jitter: float = 0.12
    intensity_jitter: float = 0.08
    noise_sigma: float = 0.04
    seed: int = 0

    def __post_init__(self):
        self.cdr_schedule = tuple(float(r) for r in self.cdr_schedule)
        if len(self.cdr_schedule) != self.n_classes:
            raise ValueError(f"cdr_schedule needs {self.n_classes} entries, got {len(self.cdr_schedule)}")
        if any(b <= a for a, b in zip(self.cdr_schedule, self.cdr_schedule[1:])):
            raise ValueError("cdr_schedule must be strictly increasing")
        if not (0 < self.cdr_schedule[0] and self.cdr_schedule[-1] < 1):
            raise ValueError("cup-to-disc ratios must lie in (0, 1)")
        if self.n_classes < 2 or self.per_class < 1:
            raise ValueError("need at least two classes and one image per class")

    @classmethod
    def for_classes(cls, n_classes: int, **kwargs) -> "SynthSpec":
        """Evenly spaced ratio schedule between 0.25 and 0.85."""
        schedule = tuple(np.round(np.linspace(0.25, 0.85, n_classes), 4))
        jitter = min(0.06, 0.45 * (schedule[1] - schedule[0]))
        return cls(n_classes=n_classes, cdr_schedule=schedule, ratio_jitter=jitter, **kwargs)


@dataclass
class LabeledSample:
    """One raw image, channel-first float in [0, 1]."""

    image: np.ndarray
    label: Optional[int]
    id: str
    box: Optional[Box] = None


@dataclass
class ManifestRow:
    id: str
    path: str
    label: Optional[int] = None
    box: Optional[Box] = None


@dataclass
class Manifest:
    rows: List[ManifestRow] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        ids = [r.id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")

    def __len__(self):
        return len(self.rows)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.rows]

    @property
    def labels(self) -> np.ndarray:
        if any(r.label is None for r in self.rows):
            raise ValueError("manifest has unlabeled rows")
        return np.array([r.label for r in self.rows], dtype=np.int64)

    def subset(self, ids: Sequence[str]) -> "Manifest":
        index = {r.id: r for r in self.rows}
        return Manifest([index[i] for i in ids], self.root)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p


def _render(spec: SynthSpec, label: int, rng: np.random.Generator):
    s = spec.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    cx = s / 2 + rng.uniform(-1, 1) * spec.position_jitter * s
    cy = s / 2 + rng.uniform(-1, 1) * spec.position_jitter * s
    r_disc = spec.disc_radius * s * (1 + rng.uniform(-1, 1) * spec.radius_jitter)
    ratio = spec.cdr_schedule[label] + rng.uniform(-1, 1) * spec.ratio_jitter
    r_cup = ratio * r_disc
    dist = np.hypot(xx - cx, yy - cy)
    # one-pixel anti-aliased edges
    disc = np.clip(r_disc - dist + 0.5, 0.0, 1.0)
    cup = np.clip(r_cup - dist + 0.5, 0.0, 1.0)

    background = np.array([0.55, 0.25, 0.12]) * (1 + rng.uniform(-1, 1) * spec.intensity_jitter)
    disc_color = np.array([0.95, 0.80, 0.55]) * (1 + rng.uniform(-1, 1) * spec.intensity_jitter)
    cup_color = np.array([0.62, 0.45, 0.30]) * (1 + rng.uniform(-1, 1) * spec.intensity_jitter)
    img = background[:, None, None] * np.ones((3, s, s))
    img = img * (1 - disc) + disc_color[:, None, None] * disc
    img = img * (1 - cup) + cup_color[:, None, None] * cup
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    box = (
        max(0, int(np.floor(cx - r_disc))), max(0, int(np.floor(cy - r_disc))),
        min(s, int(np.ceil(cx + r_disc))), min(s, int(np.ceil(cy + r_disc))),
    )
    return np.round(img * 255).astype(np.uint8), box, ratio


def generate(spec: SynthSpec, out_dir=None) -> Tuple[List[LabeledSample], Manifest]:
    """Generate ``per_class`` images for every class.

    When ``out_dir`` is given the images are written as binary PPM files
    under ``out_dir/images`` together with ``out_dir/manifest.csv``.
    """
    rng = np.random.default_rng(spec.seed)
    samples, rows = [], []
    width = len(str(spec.n_classes * spec.per_class - 1))
    i = 0
    for label in range(spec.n_classes):
        for _ in range(spec.per_class):
            pixels, box, _ = _render(spec, label, rng)
            sid = f"s{i:0{width}d}"
            samples.append(LabeledSample(pixels.astype(np.float64) / 255.0, label, sid, box))
            rows.append(ManifestRow(sid, f"images/{sid}.ppm", label, box))
            i += 1
    manifest = Manifest(rows, Path(out_dir) if out_dir is not None else Path("."))
    if out_dir is not None:
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for s, row in zip(samples, rows):
            write_image(out / row.path, s.image)
        write_manifest(manifest, out / "manifest.csv")
    return samples, manifest


def measure_cup_ratio(image: np.ndarray, box: Box) -> float:
    """Estimate cup/disc radius ratio from pixel areas inside the disc box."""
    x0, y0, x1, y1 = box
    patch = image[:, y0:y1, x0:x1]
    brightness = patch.mean(axis=0)
    disc_area = np.count_nonzero(brightness > 0.61)
    cup_area = np.count_nonzero((brightness > 0.38) & (brightness <= 0.61))
    total = disc_area + cup_area
    return float(np.sqrt(cup_area / total)) if total else 0.0


# -- raster IO --------------------------------------------------------------

def write_image(path, image: np.ndarray):
    """Write a channel-first [0, 1] image as 8-bit PPM (3 channels) or PGM (1 channel)."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3:
        Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)), mode="RGB").save(path, format="PPM")
    else:
        Image.fromarray(arr, mode="L").save(path, format="PPM")


def read_image(path) -> np.ndarray:
    """Read an 8-bit raster as channel-first float in [0, 1]; grayscale is replicated to 3 channels."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float64) / 255.0


# -- manifests ----------------------------------------------------------------

def write_manifest(manifest: Manifest, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            box = list(r.box) if r.box is not None else ["", "", "", ""]
            w.writerow([r.id, r.path, "" if r.label is None else r.label, *box])


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "path"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: manifest needs at least 'id' and 'path' columns")
        for line in reader:
            label = line.get("label", "")
            label = int(label) if label not in ("", None) else None
            coords = [line.get(k, "") for k in ("x0", "y0", "x1", "y1")]
            box = tuple(int(c) for c in coords) if all(c not in ("", None) for c in coords) else None
            rows.append(ManifestRow(line["id"], line["path"], label, box))
    return Manifest(rows, path.parent)


def relocate(manifest: Manifest, new_root) -> Manifest:
    """Re-express relative paths so the manifest can live under ``new_root``."""
    new_root = Path(new_root).resolve()
    rows = []
    for r in manifest.rows:
        target = manifest.resolve(r).resolve()
        rows.append(ManifestRow(r.id, os.path.relpath(target, new_root), r.label, r.box))
    return Manifest(rows, new_root)


def split(manifest: Manifest, test_fraction: float = 0.2, val_fraction: float = 0.15, seed: int = 0):
    """Stratified train/val/test split: ``test_fraction`` of all rows, then
    ``val_fraction`` of the remaining training rows."""
    labels = manifest.labels
    counts = np.bincount(labels)
    small = [c for c, n in enumerate(counts) if 0 < n < 3]
    if small:
        raise ValueError(f"classes {small} have fewer than 3 samples; cannot split")
    ids = np.array(manifest.ids)
    train_ids, test_ids, train_y, _ = train_test_split(
        ids, labels, test_size=test_fraction, stratify=labels, random_state=seed)
    fit_ids, val_ids = train_test_split(
        train_ids, test_size=val_fraction, stratify=train_y, random_state=seed + 1)
    # keep manifest order inside each split
    order = {i: n for n, i in enumerate(manifest.ids)}
    pick = lambda chosen: manifest.subset(sorted(chosen.tolist(), key=order.__getitem__))
    return pick(fit_ids), pick(val_ids), pick(test_ids)


def load(manifest: Manifest, on_error: str = "raise") -> List[LabeledSample]:
    """Read every manifest row; unreadable files raise or are skipped with a warning."""
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    out = []
    for r in manifest.rows:
        try:
            img = read_image(manifest.resolve(r))
        except (OSError, ValueError) as exc:
            if on_error == "raise":
                raise OSError(f"cannot read image for id {r.id!r}: {exc}") from exc
            logger.warning("skipping %s: %s", r.id, exc)
            continue
        out.append(LabeledSample(img, r.label, r.id, r.box))
    return out


@dataclass
class SampleSet:
    """Preprocessed, stacked images ready for a backbone."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    ids: Tuple[str, ...]

    def __post_init__(self):
        self.ids = tuple(self.ids)
        if len(self.ids) != len(self.images):
            raise ValueError("one id per image required")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.images):
                raise ValueError("one label per image required")

    def __len__(self):
        return len(self.ids)

    def take(self, index) -> "SampleSet":
        index = np.asarray(index)
        return SampleSet(self.images[index], None if self.labels is None else self.labels[index],
                         tuple(self.ids[i] for i in index))
