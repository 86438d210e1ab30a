"""Run configuration, final-stage training, prediction, voting and experiment drivers."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import data as data_mod
from .backbone import Backbone, BackboneConfig, build, transfer_weights
from .cam import RoiCache, RoiMap, extract_rois
from .data import Manifest, SampleSet, SynthSpec
from .imaging import AugmentPolicy, RegionSpec, augment, concat_roi, preprocess
from .losses import cea_loss
from .metrics import UNDEFINED, MetricsReport, confusion, metrics, render_report, report_csv
from .ranking import SubModelBank, aggregate, map_labels, rank_inconsistency, train_bank, train_multiclass
from .training import Schedule, TrainingCurve, predict_proba

logger = logging.getLogger(__name__)

__all__ = [
    "RunConfig", "ConfigError", "preprocess", "augment", "concat_roi", "cea_loss",
    "load_region", "train_primitive", "roi_channel", "final_inputs", "train_final", "predict_final",
    "ensemble_vote", "ensemble_votes", "run_experiment", "ExperimentResult", "METHODS",
]

METHODS = ("trk", "rk", "mc", "mc1", "mc2", "disc1", "disc2", "ensemble")
METHOD_LABELS = {"trk": "TRk-CNN", "rk": "Rk-CNN", "mc": "MC-CNN", "mc1": "MC-CNN1", "mc2": "MC-CNN2",
                 "disc1": "DISC1", "disc2": "DISC2", "ensemble": "ENSEMBLE"}


class ConfigError(ValueError):
    pass


def _tuple_of_int(text: str) -> Tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _tuple_of_str(text: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _stages(text: str) -> Tuple[Tuple[int, int], ...]:
    out = []
    for part in _tuple_of_str(text):
        width, _, depth = part.partition("x")
        out.append((int(width), int(depth or 1)))
    return tuple(out)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _opt_str(text: str) -> Optional[str]:
    return text.strip() or None


# (section, parser, formatter) per field
_SCHEMA = {
    "n_classes": ("data", int, str),
    "per_class": ("data", int, str),
    "raw_size": ("data", int, str),
    "synth_seed": ("data", int, str),
    "manifest": ("data", _opt_str, lambda v: v or ""),
    "test_fraction": ("data", float, repr),
    "val_fraction": ("data", float, repr),
    "split_seed": ("data", int, str),
    "input_size": ("model", int, str),
    "stages": ("model", _stages, lambda v: ",".join(f"{w}x{d}" for w, d in v)),
    "batch_norm": ("model", _bool, lambda v: str(v).lower()),
    "fc_widths": ("model", _tuple_of_int, lambda v: ",".join(map(str, v))),
    "dropout": ("model", float, repr),
    "dtype": ("model", str, str),
    "primitive_epochs": ("schedule", int, str),
    "final_epochs": ("schedule", int, str),
    "baseline_epochs": ("schedule", int, str),
    "batch_size": ("schedule", int, str),
    "learning_rate": ("schedule", float, repr),
    "patience": ("schedule", int, str),
    "factor": ("schedule", float, repr),
    "primitive_loss": ("schedule", str, str),
    "final_loss": ("schedule", str, str),
    "baseline_loss": ("schedule", str, str),
    "alpha": ("schedule", float, repr),
    "augment": ("augment", _bool, lambda v: str(v).lower()),
    "zoom": ("augment", float, repr),
    "shift": ("augment", float, repr),
    "hflip": ("augment", _bool, lambda v: str(v).lower()),
    "rotation": ("augment", float, repr),
    "brightness": ("augment", float, repr),
    "methods": ("experiment", _tuple_of_str, ",".join),
    "regions": ("experiment", _tuple_of_str, ",".join),
    "variant": ("experiment", str, str),
    "seeds": ("experiment", _tuple_of_int, lambda v: ",".join(map(str, v))),
    "workers": ("experiment", int, str),
    "edisc_expansion": ("experiment", _opt_float, lambda v: "auto" if v is None else repr(v)),
    "upsample": ("experiment", str, str),
}
SECTIONS = ("data", "model", "schedule", "augment", "experiment")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. Serialised as an INI file with sections
    ``[data] [model] [schedule] [augment] [experiment]``; unknown sections or
    keys are rejected."""

    n_classes: int = 3
    per_class: int = 200
    raw_size: int = 128
    synth_seed: int = 0
    manifest: Optional[str] = None
    test_fraction: float = 0.2
    val_fraction: float = 0.15
    split_seed: int = 0

    input_size: int = 64
    stages: Tuple[Tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2), (64, 2))
    batch_norm: bool = True
    fc_widths: Tuple[int, ...] = (256, 64)
    dropout: float = 0.5
    dtype: str = "float32"

    primitive_epochs: int = 100
    final_epochs: int = 100
    baseline_epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-4
    patience: int = 10
    factor: float = 0.5
    primitive_loss: str = "ce"
    final_loss: str = "cea"
    baseline_loss: str = "ce"
    alpha: float = 0.1

    augment: bool = True
    zoom: float = 0.20
    shift: float = 0.20
    hflip: bool = True
    rotation: float = 45.0
    brightness: float = 0.40

    methods: Tuple[str, ...] = ("trk",)
    regions: Tuple[str, ...] = ("disc",)
    variant: str = "standard"
    seeds: Tuple[int, ...] = (0,)
    workers: int = 1
    edisc_expansion: Optional[float] = None
    upsample: str = "bilinear"

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected some of {METHODS}")
        for r in self.regions:
            RegionSpec(r)
        if not self.regions:
            raise ConfigError("at least one region is required")
        if "ensemble" in self.methods and "disc" not in self.regions:
            raise ConfigError("the ensemble needs the disc region for tie-breaking")
        if self.variant not in ("standard", "swapped"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("primitive_loss", "final_loss", "baseline_loss"):
            if getattr(self, name) not in ("ce", "cea"):
                raise ConfigError(f"{name} must be 'ce' or 'cea'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigError(f"unknown upsampling {self.upsample!r}")
        try:
            self.backbone("primitive")
            self.augment_policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- (de)serialisation ---------------------------------------------------

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for s in SECTIONS:
            cp.add_section(s)
        for f in dataclasses.fields(self):
            section, _, fmt = _SCHEMA[f.name]
            cp.set(section, f.name, fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, source: str = "<config>") -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        values = {}
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in cp.items(section):
                spec = _SCHEMA.get(key)
                if spec is None or spec[0] != section:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                try:
                    values[key] = spec[1](raw)
                except ValueError as exc:
                    raise ConfigError(f"{source}: bad value for {key}: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_ini(p.read_text(), str(p))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    # -- derived objects -----------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        if self.n_classes == 3:
            return SynthSpec(per_class=self.per_class, image_size=self.raw_size, seed=self.synth_seed)
        return SynthSpec.for_classes(self.n_classes, per_class=self.per_class, image_size=self.raw_size,
                                     seed=self.synth_seed)

    def backbone(self, stage: str, classes: int = 2) -> BackboneConfig:
        """``primitive``: 3-channel GAP head; ``final``: 4-channel FC head;
        ``baseline``: 3-channel FC head with ``classes`` outputs."""
        common = dict(input_size=self.input_size, stages=self.stages, batch_norm=self.batch_norm, dtype=self.dtype)
        if stage == "primitive":
            return BackboneConfig(input_channels=3, head="gap_softmax", classes=2, **common)
        fc = dict(head="gap_fc_softmax", fc_widths=self.fc_widths, dropout=self.dropout)
        if stage == "final":
            return BackboneConfig(input_channels=4, classes=2, **fc, **common)
        if stage == "baseline":
            return BackboneConfig(input_channels=3, classes=classes, **fc, **common)
        raise ValueError(f"unknown stage {stage!r}")

    def schedule(self, stage: str, loss: str = None) -> Schedule:
        epochs = {"primitive": self.primitive_epochs, "final": self.final_epochs,
                  "baseline": self.baseline_epochs}[stage]
        default_loss = {"primitive": self.primitive_loss, "final": self.final_loss,
                        "baseline": self.baseline_loss}[stage]
        return Schedule(epochs=epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                        patience=self.patience, factor=self.factor, loss=loss or default_loss, alpha=self.alpha)

    def augment_policy(self) -> Optional[AugmentPolicy]:
        if not self.augment:
            return None
        return AugmentPolicy(self.zoom, self.shift, self.hflip, self.rotation, self.brightness)

    def region(self, kind: str) -> RegionSpec:
        return RegionSpec(kind, self.edisc_expansion if kind == "edisc" else None)


# -- data ---------------------------------------------------------------------

def load_region(samples: Sequence[data_mod.LabeledSample], region: RegionSpec, size: int,
                dtype: str = "float64", labelled: bool = True) -> SampleSet:
    """Crop and resize every sample. With ``labelled=False`` labels are dropped."""
    if not samples:
        raise ValueError("no samples to load")
    images = np.stack([preprocess(s.image, region, s.box, size) for s in samples]).astype(dtype)
    labels = np.array([s.label for s in samples], dtype=np.int64) if labelled else None
    if labelled and any(s.label is None for s in samples):
        raise ValueError("labelled set requested but some samples have no label")
    return SampleSet(images, labels, [s.id for s in samples])


def make_augmenter(policy: Optional[AugmentPolicy]):
    if policy is None:
        return None

    def fn(sample, rng):
        return augment(sample, policy, rng)
    return fn


# -- stages ---------------------------------------------------------------------

def train_primitive(config: RunConfig, train: SampleSet, val: SampleSet, seed: int) -> SubModelBank:
    return train_bank(config.backbone("primitive"), config.n_classes, train, val, config.schedule("primitive"),
                      seed=seed, augment=make_augmenter(config.augment_policy()), stage=1, n_jobs=config.workers)


def roi_channel(rois: Mapping[str, RoiMap], ids: Sequence[str], stage: str = "train-final") -> np.ndarray:
    missing = [i for i in ids if i not in rois]
    if missing:
        raise KeyError(f"{stage}: no ROI for ids {missing[:5]}{' ...' if len(missing) > 5 else ''}; "
                       "run extract-roi first")
    return np.stack([rois[i].values for i in ids])


def final_inputs(dataset: SampleSet, rois: Mapping[str, RoiMap]) -> SampleSet:
    """``x || R`` for every sample of ``dataset``."""
    grid = roi_channel(rois, dataset.ids)
    return SampleSet(concat_roi(dataset.images, grid), dataset.labels, dataset.ids)


def init_final_models(config: RunConfig, primitive: SubModelBank, seed: int) -> List[Backbone]:
    out = []
    for k in range(1, primitive.n_classes):
        target = build(config.backbone("final"), np.random.default_rng([seed, 2, k, 1]))
        out.append(transfer_weights(primitive.model(k), target))
    return out


def train_final(config: RunConfig, primitive: SubModelBank, rois: Mapping[str, RoiMap], train: SampleSet,
                val: SampleSet, seed: int, loss: str = None, final_config: BackboneConfig = None) -> SubModelBank:
    """Second ranking bank on ``x || R`` inputs, initialised from the primitive bank.

    ``final_config`` overrides the 4-channel backbone (a ``gap_softmax`` head
    keeps the primitive head as well).
    """
    tr = final_inputs(train, rois)
    va = final_inputs(val, rois)
    if final_config is None:
        inits = init_final_models(config, primitive, seed)
        cfg = config.backbone("final")
    else:
        cfg = final_config
        inits = [transfer_weights(primitive.model(k), build(cfg, np.random.default_rng([seed, 2, k, 1])))
                 for k in range(1, primitive.n_classes)]
    return train_bank(cfg, primitive.n_classes, tr, va, config.schedule("final", loss), seed=seed,
                      augment=make_augmenter(config.augment_policy()), init_models=inits, stage=2,
                      n_jobs=config.workers)


def predict_final(final: SubModelBank, images: np.ndarray, primitive: SubModelBank = None,
                  rois: np.ndarray = None, variant: str = "standard", upsample_mode: str = "bilinear",
                  ) -> np.ndarray:
    """Final-stage class for unlabelled images.

    ROIs come from ``rois`` (one grid per image, e.g. read from the cache)
    or are computed on the fly from ``primitive``.
    """
    images = np.asarray(images)
    if rois is None:
        if primitive is None:
            raise ValueError("predict_final needs either ROI grids or the primitive bank")
        ids = [str(i) for i in range(len(images))]
        computed = extract_rois(primitive, images, ids, variant, upsample_mode)
        rois = np.stack([computed[i].values for i in ids])
    x = concat_roi(images, np.asarray(rois)).astype(final.models[0].dtype, copy=False)
    P, _ = aggregate(final, x)
    return P


def ensemble_vote(predictions) -> int:
    """Strict-majority class over region predictions; the disc region breaks ties.

    ``predictions`` is a mapping or a list of ``(region, class)`` pairs.
    """
    pairs = list(predictions.items()) if isinstance(predictions, Mapping) else list(predictions)
    if not pairs:
        raise ValueError("no predictions to vote on")
    regions = [r for r, _ in pairs]
    if len(set(regions)) != len(regions):
        raise ValueError(f"duplicate region in {regions}")
    classes = [int(c) for _, c in pairs]
    values, counts = np.unique(classes, return_counts=True)
    best = int(np.argmax(counts))
    if counts[best] * 2 > len(classes):
        return int(values[best])
    disc = dict(pairs).get("disc")
    if disc is None:
        raise ValueError("no strict majority and no disc prediction to break the tie")
    return int(disc)


def ensemble_votes(predictions: Mapping[str, np.ndarray]) -> np.ndarray:
    arrays = {r: np.asarray(p) for r, p in predictions.items()}
    n = {len(a) for a in arrays.values()}
    if len(n) != 1:
        raise ValueError("region predictions differ in length")
    return np.array([ensemble_vote([(r, a[i]) for r, a in arrays.items()]) for i in range(n.pop())],
                    dtype=np.int64)


# -- experiments ------------------------------------------------------------------

@dataclass
class ExperimentResult:
    seed: int
    reports: Dict[str, MetricsReport] = field(default_factory=dict)
    predictions: Dict[str, np.ndarray] = field(default_factory=dict)
    curves: Dict[str, List[TrainingCurve]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    test_ids: Tuple[str, ...] = ()
    test_labels: Optional[np.ndarray] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def ordered_reports(self) -> List[MetricsReport]:
        return list(self.reports.values())


def prepare_dataset(config: RunConfig, root=None) -> Manifest:
    """The configured manifest, or a freshly generated synthetic dataset."""
    if config.manifest:
        return data_mod.read_manifest(config.manifest)
    _, manifest = data_mod.generate(config.synth_spec(), root)
    return manifest


def _region_label(kind: str) -> str:
    return {"disc": "DISC", "edisc": "EDISC", "original": "ORIGINAL"}[kind]


class _Run:
    """Shares data and primitive banks between the methods of one seed."""

    def __init__(self, config: RunConfig, manifest: Manifest, seed: int, out_dir: Optional[Path]):
        self.config = config
        self.seed = seed
        self.out = out_dir
        train_m, val_m, test_m = data_mod.split(manifest, config.test_fraction, config.val_fraction,
                                                config.split_seed)
        self.samples = {name: data_mod.load(m) for name, m in (("train", train_m), ("val", val_m), ("test", test_m))}
        self._sets: Dict[Tuple[str, str], SampleSet] = {}
        self._primitive: Dict[str, Tuple[SubModelBank, float]] = {}
        self._rois: Dict[Tuple[str, str], Tuple[Dict[str, RoiMap], float]] = {}
        self.result = ExperimentResult(seed)
        test = self.dataset("disc" if "disc" in config.regions else config.regions[0], "test")
        self.result.test_ids = test.ids
        self.result.test_labels = test.labels

    def dataset(self, region: str, part: str) -> SampleSet:
        key = (region, part)
        if key not in self._sets:
            self._sets[key] = load_region(self.samples[part], self.config.region(region), self.config.input_size,
                                          self.config.dtype)
        return self._sets[key]

    def _dir(self, *parts) -> Optional[Path]:
        if self.out is None:
            return None
        d = self.out.joinpath(*parts)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def primitive(self, region: str) -> Tuple[SubModelBank, float]:
        if region not in self._primitive:
            t0 = time.perf_counter()
            bank = train_primitive(self.config, self.dataset(region, "train"), self.dataset(region, "val"), self.seed)
            self._primitive[region] = (bank, time.perf_counter() - t0)
            d = self._dir(region, "primitive")
            if d is not None:
                bank.save(d)
        return self._primitive[region]

    def rois(self, region: str, variant: str) -> Tuple[Dict[str, RoiMap], float]:
        key = (region, variant)
        if key not in self._rois:
            bank, _ = self.primitive(region)
            t0 = time.perf_counter()
            out: Dict[str, RoiMap] = {}
            d = self._dir(region, "roi")
            cache = RoiCache(d) if d is not None else None
            for part in ("train", "val", "test"):
                ds = self.dataset(region, part)
                out.update(extract_rois(bank, ds.images, ds.ids, variant, self.config.upsample, cache=cache))
            self._rois[key] = (out, time.perf_counter() - t0)
        return self._rois[key]

    def record(self, name: str, label: str, pred: np.ndarray, binary_mapping: str = None,
               curves: List[TrainingCurve] = (), seconds: float = 0.0):
        y = self.result.test_labels
        if binary_mapping is not None:
            cm = confusion(map_labels(y, binary_mapping, self.config.n_classes), pred, 2)
            report = metrics(cm, label, binary=True)
        else:
            cm = confusion(y, pred, self.config.n_classes)
            report = metrics(cm, label)
        self.result.reports[name] = report
        self.result.predictions[name] = np.asarray(pred, dtype=np.int64)
        self.result.curves[name] = list(curves)
        self.result.timings[name] = seconds
        d = self._dir(name)
        if d is not None:
            (d / "confusion.csv").write_text(cm.to_csv())
            for k, c in enumerate(curves, start=1):
                (d / f"curve_sub{k}.csv").write_text(c.to_csv())
            lines = ["id,prediction"] + [f"{i},{int(p)}" for i, p in zip(self.result.test_ids, pred)]
            (d / "predictions.csv").write_text("\n".join(lines) + "\n")

    def trk(self, region: str, variant: str = None, loss: str = None) -> Tuple[np.ndarray, SubModelBank, float]:
        variant = variant or self.config.variant
        bank, t_prim = self.primitive(region)
        rois, t_roi = self.rois(region, variant)
        t0 = time.perf_counter()
        final = train_final(self.config, bank, rois, self.dataset(region, "train"), self.dataset(region, "val"),
                            self.seed, loss)
        test = self.dataset(region, "test")
        pred = predict_final(final, test.images, rois=roi_channel(rois, test.ids, "evaluate"))
        return pred, final, t_prim + t_roi + time.perf_counter() - t0

    def save_final(self, name: str, final: SubModelBank):
        d = self._dir(name, "final")
        if d is not None:
            final.save(d)

    def run(self, methods: Sequence[str]):
        cfg = self.config
        primary = cfg.regions[0]
        region_preds: Dict[str, np.ndarray] = {}
        for method in methods:
            label = METHOD_LABELS[method]
            if method == "trk":
                pred, final, secs = self.trk(primary)
                self.save_final(method, final)
                region_preds[primary] = pred
                self.record(method, label, pred, curves=final.curves, seconds=secs)
            elif method == "rk":
                bank, secs = self.primitive(primary)
                test = self.dataset(primary, "test")
                P, bits = aggregate(bank, test.images)
                self.result.diagnostics["rk_rank_inconsistency"] = rank_inconsistency(bits)
                self.record(method, label, P, curves=bank.curves, seconds=secs)
            elif method in ("mc", "mc1", "mc2"):
                mapping = {"mc": "identity", "mc1": "merge_high", "mc2": "merge_low"}[method]
                t0 = time.perf_counter()
                classes = cfg.n_classes if mapping == "identity" else 2
                model, curve = train_multiclass(cfg.backbone("baseline", classes), self.dataset(primary, "train"),
                                                self.dataset(primary, "val"), cfg.schedule("baseline"),
                                                cfg.n_classes, mapping, self.seed,
                                                make_augmenter(cfg.augment_policy()))
                pred = predict_proba(model, self.dataset(primary, "test").images).argmax(axis=1)
                d = self._dir(method)
                if d is not None:
                    model.save(d / "model.ornk")
                self.record(method, label, pred, None if mapping == "identity" else mapping, [curve],
                            time.perf_counter() - t0)
            elif method == "disc1":
                pred, final, secs = self.trk("disc", loss="ce")
                self.save_final(method, final)
                self.record(method, label, pred, curves=final.curves, seconds=secs)
            elif method == "disc2":
                pred, final, secs = self.trk("disc", variant="swapped")
                self.save_final(method, final)
                self.record(method, label, pred, curves=final.curves, seconds=secs)
            elif method == "ensemble":
                total = 0.0
                for region in cfg.regions:
                    if region not in region_preds:
                        pred, final, secs = self.trk(region)
                        self.save_final(f"region_{region}", final)
                        region_preds[region] = pred
                        total += secs
                        self.record(f"region_{region}", _region_label(region), pred, curves=final.curves,
                                    seconds=secs)
                    elif f"region_{region}" not in self.result.reports:
                        self.record(f"region_{region}", _region_label(region), region_preds[region])
                vote = ensemble_votes({r: region_preds[r] for r in cfg.regions})
                self.record(method, label, vote, seconds=total)


def run_experiment(config: RunConfig, manifest: Manifest, seed: int = None, out_dir=None,
                   methods: Sequence[str] = None) -> ExperimentResult:
    """Train and evaluate every requested method for one seed on shared splits.

    With ``out_dir`` the checkpoints, ROI cache, confusion matrices, training
    curves, predictions and ``metrics.csv`` are written there.
    """
    seed = config.seeds[0] if seed is None else seed
    methods = tuple(methods or config.methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    out = Path(out_dir) if out_dir is not None else None
    run = _Run(config, manifest, seed, out)
    run.run(methods)
    if out is not None:
        reports = run.result.ordered_reports()
        (out / "metrics.csv").write_text(report_csv(reports, config.n_classes))
        (out / "report.txt").write_text(render_report(reports, config.n_classes))
    return run.result


def mean_report(reports: Sequence[MetricsReport], label: str = None) -> MetricsReport:
    """Column-wise mean of several runs; a column undefined in any run stays undefined."""
    keys = list(reports[0].values)
    values = {}
    for k in keys:
        vs = [r.values.get(k, UNDEFINED) for r in reports]
        values[k] = UNDEFINED if any(v is UNDEFINED for v in vs) else float(np.mean(vs))
    return MetricsReport(label or reports[0].label, values, sum(r.n_samples for r in reports), reports[0].binary)
