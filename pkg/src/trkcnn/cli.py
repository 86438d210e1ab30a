"""Command-line entry point.

Every command works inside a run directory (``--out``)::

    config.ini            effective configuration snapshot
    data/                 synthetic images and manifest.csv
    splits/               train.csv, val.csv, test.csv
    <region>/primitive/   first ranking bank
    <region>/roi/         ROI cache
    <region>/final/       second ranking bank
    baselines/<name>/     Rk/MC baselines
    metrics.csv, confusion.csv, report.txt, summary.json, timing.json
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import data as data_mod
from .data import write_image
from .cam import RoiCache, extract_rois, roi_to_raster
from .metrics import confusion, metrics, render_report, report_csv
from .pipeline import (METHOD_LABELS, METHODS, ConfigError, RunConfig, load_region, make_augmenter, mean_report,
                       predict_final, prepare_dataset, run_experiment, train_final, train_primitive)
from .ranking import SubModelBank, aggregate, map_labels, train_multiclass
from .training import predict_proba

logger = logging.getLogger("trkcnn")

WORKERS_ENV = "TRKCNN_WORKERS"
BASELINES = ("rk", "mc", "mc1", "mc2")


class StageError(RuntimeError):
    """A prerequisite artifact is missing; the message names the stage to run."""


# -- run directory ----------------------------------------------------------------

class RunDir:
    def __init__(self, root, config: RunConfig, seed: int):
        self.root = Path(root)
        self.config = config
        self.seed = seed
        self.region = config.regions[0]

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def ensure(self, *parts) -> Path:
        p = self.path(*parts)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def snapshot(self):
        self.ensure()
        self.path("config.ini").write_text(self.config.to_ini())

    # artifacts
    @property
    def manifest_path(self) -> Path:
        return Path(self.config.manifest) if self.config.manifest else self.path("data", "manifest.csv")

    def manifest(self) -> data_mod.Manifest:
        p = self.manifest_path
        if not p.exists():
            raise StageError(f"manifest {p} not found; run `synth` first or set [data] manifest")
        try:
            return data_mod.read_manifest(p)
        except (OSError, ValueError, KeyError) as exc:
            raise StageError(f"unreadable manifest {p}: {exc}") from exc

    def split_manifest(self, part: str) -> data_mod.Manifest:
        p = self.path("splits", f"{part}.csv")
        if not p.exists():
            raise StageError(f"split file {p} not found; run `split` first")
        return data_mod.read_manifest(p)

    def dataset(self, part: str, labelled: bool = True):
        samples = data_mod.load(self.split_manifest(part))
        return load_region(samples, self.config.region(self.region), self.config.input_size, self.config.dtype,
                           labelled)

    def primitive(self) -> SubModelBank:
        d = self.path(self.region, "primitive")
        if not (d / "bank.json").exists():
            raise StageError(f"no primitive bank in {d}; run `train-primitive` first")
        return SubModelBank.load(d)

    def final(self) -> SubModelBank:
        d = self.path(self.region, "final")
        if not (d / "bank.json").exists():
            raise StageError(f"no final bank in {d}; run `train-final` first")
        return SubModelBank.load(d)

    def roi_cache(self) -> RoiCache:
        return RoiCache(self.path(self.region, "roi"))

    def cached_rois(self, bank: SubModelBank, variant: str, ids) -> Dict[str, object]:
        d = self.path(self.region, "roi")
        missing_stage = "run `extract-roi` first"
        if not d.exists():
            raise StageError(f"no ROI cache in {d}; {missing_stage}")
        cache = RoiCache(d)
        h = bank.content_hash()
        out = {}
        missing = []
        for i in ids:
            roi = cache.get(i, h, variant)
            if roi is None:
                missing.append(i)
            else:
                out[i] = roi
        if missing:
            raise StageError(f"ROI cache {d} lacks {len(missing)} ids for variant {variant!r} "
                             f"(e.g. {missing[0]!r}); {missing_stage}")
        return out

    def write_summary(self, command: str, payload: dict, seconds: float):
        summary = {"command": command, "seed": self.seed, "config_hash": self.config.config_hash()}
        summary.update(payload)
        self.path("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        # wall time lives apart from the summary so that summaries of identical runs are identical
        self.path("timing.json").write_text(json.dumps({"command": command, "wall_time_s": seconds}) + "\n")


# -- stages -------------------------------------------------------------------------

def stage_synth(run: RunDir) -> dict:
    if run.config.manifest:
        raise StageError("[data] manifest is set; synth only generates the built-in synthetic dataset")
    _, manifest = data_mod.generate(run.config.synth_spec(), run.ensure("data"))
    return {"images": len(manifest), "classes": int(len(np.unique(manifest.labels)))}


def stage_split(run: RunDir) -> dict:
    manifest = run.manifest()
    parts = data_mod.split(manifest, run.config.test_fraction, run.config.val_fraction, run.config.split_seed)
    d = run.ensure("splits")
    for name, m in zip(("train", "val", "test"), parts):
        data_mod.write_manifest(data_mod.relocate(m, d), d / f"{name}.csv")
    return {name: len(m) for name, m in zip(("train", "val", "test"), parts)}


def stage_train_primitive(run: RunDir) -> dict:
    bank = train_primitive(run.config, run.dataset("train"), run.dataset("val"), run.seed)
    bank.save(run.ensure(run.region, "primitive"))
    return {"primitive_best_val_loss": [c.best_val_loss for c in bank.curves], "bank_hash": bank.content_hash()}


def stage_extract_roi(run: RunDir) -> dict:
    bank = run.primitive()
    cache = run.roi_cache()
    count = 0
    for part in ("train", "val", "test"):
        ds = run.dataset(part, labelled=False)
        count += len(extract_rois(bank, ds.images, ds.ids, run.config.variant, run.config.upsample, cache=cache))
    return {"rois": count, "variant": run.config.variant, "bank_hash": bank.content_hash()}


def stage_train_final(run: RunDir) -> dict:
    bank = run.primitive()
    train, val = run.dataset("train"), run.dataset("val")
    rois = run.cached_rois(bank, run.config.variant, list(train.ids) + list(val.ids))
    final = train_final(run.config, bank, rois, train, val, run.seed)
    final.save(run.ensure(run.region, "final"))
    return {"final_best_val_loss": [c.best_val_loss for c in final.curves], "final_hash": final.content_hash()}


def _write_reports(run: RunDir, reports, cms, prefix: Path = None):
    d = prefix or run.root
    d.mkdir(parents=True, exist_ok=True)
    n = run.config.n_classes
    (d / "metrics.csv").write_text(report_csv(reports, n))
    (d / "report.txt").write_text(render_report(reports, n))
    for name, cm in cms.items():
        (d / f"confusion_{name}.csv").write_text(cm.to_csv())


def _headline(reports) -> dict:
    out = {}
    for r in reports:
        out[r.label] = {k: (None if not isinstance(v, float) else round(v, 6)) for k, v in r.values.items()}
    return out


def stage_evaluate(run: RunDir) -> dict:
    final = run.final()
    test = run.dataset("test", labelled=False)
    labels = data_mod.read_manifest(run.path("splits", "test.csv")).labels
    try:
        rois = run.cached_rois(run.primitive(), run.config.variant, test.ids)
        grid = np.stack([rois[i].values for i in test.ids])
        pred = predict_final(final, test.images, rois=grid)
    except StageError:
        pred = predict_final(final, test.images, run.primitive(), variant=run.config.variant,
                             upsample_mode=run.config.upsample)
    cm = confusion(labels, pred, run.config.n_classes)
    report = metrics(cm, METHOD_LABELS["trk"])
    _write_reports(run, [report], {"trk": cm})
    lines = ["id,prediction"] + [f"{i},{int(p)}" for i, p in zip(test.ids, pred)]
    run.path("predictions.csv").write_text("\n".join(lines) + "\n")
    print(render_report([report], run.config.n_classes), end="")
    return {"metrics": _headline([report])}


def stage_train_baseline(run: RunDir, which: str) -> dict:
    cfg = run.config
    test = run.dataset("test", labelled=False)
    labels = data_mod.read_manifest(run.path("splits", "test.csv")).labels
    d = run.ensure("baselines", which)
    if which == "rk":
        prim = run.path(run.region, "primitive", "bank.json")
        bank = run.primitive() if prim.exists() else train_primitive(cfg, run.dataset("train"), run.dataset("val"),
                                                                      run.seed)
        bank.save(d / "bank")
        pred, _ = aggregate(bank, test.images)
        cm = confusion(labels, pred, cfg.n_classes)
        report = metrics(cm, METHOD_LABELS["rk"])
    else:
        mapping = {"mc": "identity", "mc1": "merge_high", "mc2": "merge_low"}[which]
        classes = cfg.n_classes if mapping == "identity" else 2
        model, curve = train_multiclass(cfg.backbone("baseline", classes), run.dataset("train"), run.dataset("val"),
                                        cfg.schedule("baseline"), cfg.n_classes, mapping, run.seed,
                                        make_augmenter(cfg.augment_policy()))
        model.save(d / "model.ornk")
        (d / "curve.csv").write_text(curve.to_csv())
        pred = predict_proba(model, test.images).argmax(axis=1)
        if mapping == "identity":
            cm = confusion(labels, pred, cfg.n_classes)
            report = metrics(cm, METHOD_LABELS[which])
        else:
            cm = confusion(map_labels(labels, mapping, cfg.n_classes), pred, 2)
            report = metrics(cm, METHOD_LABELS[which], binary=True)
    _write_reports(run, [report], {which: cm}, d)
    print(render_report([report], cfg.n_classes), end="")
    return {"metrics": _headline([report])}


def stage_compare(run: RunDir, seeds: List[int]) -> dict:
    cfg = run.config
    manifest = run.manifest() if (cfg.manifest or run.manifest_path.exists()) else prepare_dataset(cfg, run.ensure("data"))
    per_seed = {}
    rows = []
    by_method: Dict[str, list] = {}
    timings = {}
    for seed in seeds:
        result = run_experiment(cfg, manifest, seed, run.ensure(f"seed{seed}"))
        per_seed[str(seed)] = _headline(result.ordered_reports())
        timings[str(seed)] = result.timings
        for name, rep in result.reports.items():
            by_method.setdefault(name, []).append(rep)
    for name, reps in by_method.items():
        rows.append(mean_report(reps, f"{reps[0].label} (mean of {len(reps)})" if len(reps) > 1 else reps[0].label))
    _write_reports(run, rows, {})
    print(render_report(rows, cfg.n_classes), end="")
    run.path("timing_methods.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return {"seeds": list(seeds), "per_seed": per_seed, "mean": _headline(rows)}


def stage_heatmaps(run: RunDir, ids: List[str]) -> dict:
    d = run.path(run.region, "roi")
    if not d.exists():
        raise StageError(f"no ROI cache in {d}; run `extract-roi` first")
    bank = run.primitive()
    rois = RoiCache(d).load_all(bank.content_hash(), run.config.variant)
    rows = {}
    for part in ("train", "val", "test"):
        p = run.path("splits", f"{part}.csv")
        if p.exists():
            m = data_mod.read_manifest(p)
            rows.update({r.id: (m, r) for r in m.rows})
    out = run.ensure("heatmaps")
    written, skipped = [], []
    for sid in ids or sorted(rois):
        if sid not in rois or sid not in rows:
            skipped.append(sid)
            continue
        m, row = rows[sid]
        sample = data_mod.load(m.subset([sid]))[0]
        x = load_region([sample], run.config.region(run.region), run.config.input_size, "float64", False).images[0]
        img = np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)
        heat = np.repeat(roi_to_raster(rois[sid].values)[None], 3, axis=0)
        write_image(out / f"{sid}.ppm", np.concatenate([img, heat], axis=2))
        written.append(sid)
    if skipped:
        print(f"skipped unknown ids: {', '.join(skipped)}", file=sys.stderr)
    return {"written": written, "skipped": skipped}


def stage_end2end(run: RunDir) -> dict:
    out = {}
    if not run.config.manifest:
        out["synth"] = stage_synth(run)
    out["split"] = stage_split(run)
    out["train_primitive"] = stage_train_primitive(run)
    out["extract_roi"] = stage_extract_roi(run)
    out["train_final"] = stage_train_final(run)
    out.update(stage_evaluate(run))
    return out


# -- argument handling --------------------------------------------------------------

def _csv_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (INI); defaults apply when omitted")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--seed", type=int, help="model seed (default: first of [experiment] seeds)")
    common.add_argument("--workers", type=int,
                        help=f"parallel sub-model trainings (default: ${WORKERS_ENV}, else the config value)")
    common.add_argument("--methods", type=_csv_list, help=f"comma list from {','.join(METHODS)}")
    common.add_argument("--regions", type=_csv_list, help="comma list from disc,edisc,original")
    common.add_argument("--variant", choices=("standard", "swapped"), help="ROI fusion variant")
    common.add_argument("--loss", choices=("ce", "cea"), help="final-stage loss")
    common.add_argument("--seeds", type=lambda s: [int(v) for v in _csv_list(s)], help="compare: comma list of seeds")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    parser = argparse.ArgumentParser(prog="trkcnn", description="Transferable ranking CNN experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("split", parents=[common], help="stratified train/val/test split")
    sub.add_parser("train-primitive", parents=[common], help="train the first ranking bank")
    sub.add_parser("extract-roi", parents=[common], help="compute and cache ROIs from the first bank")
    sub.add_parser("train-final", parents=[common], help="train the second bank on image+ROI inputs")
    b = sub.add_parser("train-baseline", parents=[common], help="train an Rk or MC baseline")
    b.add_argument("baseline", choices=BASELINES)
    sub.add_parser("evaluate", parents=[common], help="evaluate the final bank on the test split")
    sub.add_parser("compare", parents=[common], help="train and evaluate several methods over seeds")
    sub.add_parser("end2end", parents=[common], help="synth, split, both stages and evaluation")
    h = sub.add_parser("heatmaps", parents=[common], help="export image/ROI rasters")
    h.add_argument("ids", nargs="*", help="sample ids (default: all cached)")
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        config = RunConfig()
    changes = {}
    workers = args.workers
    if workers is None and os.environ.get(WORKERS_ENV):
        workers = int(os.environ[WORKERS_ENV])
    if workers is not None:
        changes["workers"] = workers
    if args.methods:
        changes["methods"] = tuple(args.methods)
    if args.regions:
        changes["regions"] = tuple(args.regions)
    if args.variant:
        changes["variant"] = args.variant
    if args.loss:
        changes["final_loss"] = args.loss
    if args.seeds:
        changes["seeds"] = tuple(args.seeds)
    elif args.seed is not None:
        changes["seeds"] = (args.seed,)
    return config.replace(**changes) if changes else config


def dispatch(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        config = resolve_config(args)
        run = RunDir(args.out, config, config.seeds[0])
        run.snapshot()
        cmd = args.command
        if cmd == "synth":
            payload = stage_synth(run)
        elif cmd == "split":
            payload = stage_split(run)
        elif cmd == "train-primitive":
            payload = stage_train_primitive(run)
        elif cmd == "extract-roi":
            payload = stage_extract_roi(run)
        elif cmd == "train-final":
            payload = stage_train_final(run)
        elif cmd == "train-baseline":
            payload = stage_train_baseline(run, args.baseline)
        elif cmd == "evaluate":
            payload = stage_evaluate(run)
        elif cmd == "compare":
            payload = stage_compare(run, list(config.seeds))
        elif cmd == "end2end":
            payload = stage_end2end(run)
        else:
            payload = stage_heatmaps(run, args.ids)
        run.write_summary(cmd, payload, time.perf_counter() - t0)
    except (StageError, ConfigError, FileNotFoundError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"trkcnn {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
