import hashlib
import json

import pytest

from trkcnn.cli import WORKERS_ENV, build_parser, dispatch, resolve_config
from trkcnn.data import read_image
from trkcnn.pipeline import RunConfig

TINY = RunConfig(input_size=16, stages=((4, 1), (6, 1)), fc_widths=(8,), dtype="float64", primitive_epochs=1,
                 final_epochs=1, baseline_epochs=1, batch_size=8, learning_rate=1e-2, per_class=8, raw_size=32)


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY.to_ini())
    return p


def run(cmd, cfg, out, *extra):
    return dispatch([cmd, "--config", str(cfg), "--out", str(out), *extra])


def test_staged_run(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert run("synth", cfg_file, out) == 0
    assert run("split", cfg_file, out) == 0
    assert run("train-primitive", cfg_file, out) == 0
    capsys.readouterr()
    assert run("train-final", cfg_file, out) == 2
    assert "extract-roi" in capsys.readouterr().err
    assert run("extract-roi", cfg_file, out) == 0
    assert run("train-final", cfg_file, out) == 0
    assert run("evaluate", cfg_file, out) == 0
    report = capsys.readouterr().out
    assert "TRk-CNN" in report and "Acc(%)" in report
    for name in ("config.ini", "metrics.csv", "confusion_trk.csv", "predictions.csv", "summary.json", "timing.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["command"] == "evaluate" and summary["config_hash"] == TINY.config_hash()
    assert RunConfig.load(out / "config.ini") == TINY

    assert run("train-baseline", cfg_file, out, "mc2") == 0
    assert "MC-CNN2" in (out / "baselines" / "mc2" / "metrics.csv").read_text()
    assert run("train-baseline", cfg_file, out, "rk") == 0

    ids = sorted(p.name.split(".")[0] for p in (out / "disc" / "roi").glob("*.roi"))[:2]
    capsys.readouterr()
    assert run("heatmaps", cfg_file, out, *ids, "nope") == 0
    assert "nope" in capsys.readouterr().err
    files = sorted((out / "heatmaps").iterdir())
    assert [f.stem for f in files] == ids
    img = read_image(files[0])
    assert img.shape == (3, 16, 32)
    digests = [hashlib.sha256(f.read_bytes()).hexdigest() for f in files]
    assert run("heatmaps", cfg_file, out, *ids) == 0
    assert digests == [hashlib.sha256(f.read_bytes()).hexdigest() for f in files]


def test_deleted_intermediate_regenerates_identically(cfg_file, tmp_path):
    out = tmp_path / "run"
    for cmd in ("synth", "split", "train-primitive"):
        assert run(cmd, cfg_file, out) == 0
    bank = out / "disc" / "primitive" / "sub1.ornk"
    before = bank.read_bytes()
    bank.unlink()
    assert run("train-primitive", cfg_file, out) == 0
    assert bank.read_bytes() == before


def test_compare_reports_each_method(cfg_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run("compare", cfg_file, out, "--methods", "trk,rk,mc", "--seeds", "0,1") == 0
    text = capsys.readouterr().out
    for label in ("TRk-CNN (mean of 2)", "Rk-CNN (mean of 2)", "MC-CNN (mean of 2)"):
        assert label in text
    assert (out / "seed0" / "metrics.csv").exists() and (out / "seed1" / "metrics.csv").exists()
    assert json.loads((out / "summary.json").read_text())["seeds"] == [0, 1]


def test_unknown_flag_fails(tmp_path, capsys):
    assert dispatch(["synth", "--out", str(tmp_path), "--bogus"]) != 0
    assert "--bogus" in capsys.readouterr().err


def test_missing_config_named(tmp_path, capsys):
    assert dispatch(["synth", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)]) == 2
    assert "absent.cfg" in capsys.readouterr().err


def test_bad_config_key_named(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[model]\nwidth = 3\n")
    assert dispatch(["synth", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "width" in capsys.readouterr().err


def test_unreadable_manifest_named(tmp_path, capsys):
    p = tmp_path / "m.cfg"
    p.write_text(TINY.replace(manifest=str(tmp_path / "nothing.csv")).to_ini())
    assert dispatch(["split", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "nothing.csv" in capsys.readouterr().err


def test_missing_split_names_stage(cfg_file, tmp_path, capsys):
    assert run("train-primitive", cfg_file, tmp_path / "empty") == 2
    assert "split" in capsys.readouterr().err


def test_worker_precedence(cfg_file, monkeypatch):
    parser = build_parser()
    monkeypatch.setenv(WORKERS_ENV, "3")
    args = parser.parse_args(["synth", "--config", str(cfg_file), "--out", "x"])
    assert resolve_config(args).workers == 3
    args = parser.parse_args(["synth", "--config", str(cfg_file), "--out", "x", "--workers", "2"])
    assert resolve_config(args).workers == 2
    monkeypatch.delenv(WORKERS_ENV)
    args = parser.parse_args(["synth", "--config", str(cfg_file), "--out", "x"])
    assert resolve_config(args).workers == 1


def test_flag_overrides(cfg_file):
    args = build_parser().parse_args(["compare", "--config", str(cfg_file), "--out", "x", "--variant", "swapped",
                                      "--loss", "ce", "--methods", "trk,disc2", "--regions", "disc,edisc"])
    cfg = resolve_config(args)
    assert cfg.variant == "swapped" and cfg.final_loss == "ce"
    assert cfg.methods == ("trk", "disc2") and cfg.regions == ("disc", "edisc")


def test_help_lists_commands(capsys):
    assert dispatch(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in ("synth", "split", "train-primitive", "extract-roi", "train-final", "train-baseline", "evaluate",
                "compare", "end2end", "heatmaps"):
        assert cmd in text
