import dataclasses
import json

import numpy as np
import pytest
import torch
from PIL import Image

from advaug.datasets import NormStats, compute_stats, denormalize, preprocess, write_idx
from advaug.errors import ConfigError
from advaug.harness import cli, export
from advaug.harness.config import parse_config
from advaug.harness.report import ReportError, aggregate, report
from advaug.harness.runner import (
    ABLATIONS,
    ablation_components,
    config_hash,
    resolve_train_config,
    spec_from_config,
    summarize_sweep,
)
from advaug.models import Generator, GeneratorConfig
from advaug.training import load_generator
from conftest import toy_images


# -- configs ----------------------------------------------------------------------


def test_config_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("dataset = mnist\nwidth = 1.0\nm = 64  # batch\n")
    (tmp_path / "run.cfg").write_text("include = base.cfg\nwidth = 0.25\nsnapshot-epochs = 1, 2\n")
    cfg = parse_config(tmp_path / "run.cfg")
    assert cfg == {"dataset": "mnist", "width": "0.25", "m": "64", "snapshot_epochs": "1, 2"}
    (tmp_path / "loop.cfg").write_text("include = loop.cfg\n")
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "loop.cfg")
    (tmp_path / "bad.cfg").write_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "bad.cfg")


# -- ablation grid ----------------------------------------------------------------


def test_ablation_masks_nest():
    comp = {k: ablation_components(k) for k in ABLATIONS}
    assert comp["l"] > comp["h"] > comp["g"] > comp["e"] and comp["g"] > comp["f"]
    assert comp["a"] == {"C"} and comp["b"] == {"C", "T"}
    assert comp["c"] == {"C", "T", "D^C", "D^D"} and comp["d"] == {"C", "D_EC", "D^C"}
    assert len(set(comp.values())) == len(comp)
    with pytest.raises(ConfigError):
        ablation_components("z")


def test_h_differs_from_l_only_in_gamma():
    base = spec_from_config({"dataset": "mnist", "data_root": "/nowhere"}).train
    h, l_ = resolve_train_config(base, "h").to_dict(), resolve_train_config(base, "l").to_dict()
    diff = {k for k in h if h[k] != l_[k]}
    assert diff == {"weights"} and h["weights"]["gamma"] == 0 and l_["weights"]["gamma"] > 0
    assert {k for k in h["weights"] if h["weights"][k] != l_["weights"][k]} == {"gamma"}


def test_ablation_a_is_baseline_none():
    spec = spec_from_config({"dataset": "mnist", "data_root": "/nowhere", "ablation": "a"})
    assert spec.train.mode == "baseline" and spec.train.da_policy == "none"
    assert spec.policy_label == "baseline-none"


def test_flags_override_config_and_hash_ignores_seed(tmp_path):
    a = spec_from_config({"dataset": "mnist", "data_root": str(tmp_path), "seed": "0", "width": "0.5"})
    b = spec_from_config({"dataset": "mnist", "data_root": str(tmp_path), "seed": "1", "width": "0.5"})
    c = spec_from_config({"dataset": "mnist", "data_root": str(tmp_path), "seed": "1", "width": "0.25"})
    assert a.train.width == 0.5 and a.train.seeds != b.train.seeds
    assert config_hash(a) == config_hash(b) != config_hash(c)


# -- reports ----------------------------------------------------------------------


def _result(path, policy="model-l", seed=0, acc=90.0, chash="c1", code="k1", ablation="l"):
    path.mkdir(parents=True, exist_ok=True)
    (path / "result.json").write_text(json.dumps({
        "dataset": "mnist", "subset_size": 550, "policy": policy, "ablation": ablation, "seed": seed,
        "test_acc": acc, "config_hash": chash, "code_hash": code}))


def test_report_empty_dir_errors(tmp_path):
    with pytest.raises(ReportError, match="no runs"):
        report(tmp_path)
    with pytest.raises(ReportError, match="no runs"):
        report(tmp_path / "missing")


def test_report_single_run_and_mean(tmp_path):
    _result(tmp_path / "one")
    out = report(tmp_path)
    assert len(out["rows"]) == 1 and "90.00" in out["comparison"]
    for s, acc in ((1, 92.0), (2, 95.5)):
        _result(tmp_path / f"s{s}", seed=s, acc=acc)
    row = report(tmp_path)["rows"][0]
    assert row["mean"] == pytest.approx((90.0 + 92.0 + 95.5) / 3) and row["n"] == 3
    assert row["std"] == pytest.approx(float(np.std([90.0, 92.0, 95.5])))


def test_report_refuses_mismatched_hashes(tmp_path):
    _result(tmp_path / "a")
    _result(tmp_path / "b", seed=1, code="other")
    with pytest.raises(ReportError, match="mismatched"):
        report(tmp_path)
    rows = aggregate([{"dataset": "mnist", "subset_size": 550, "policy": "baseline-none", "ablation": "a",
                       "seed": 0, "test_acc": 1.0, "config_hash": "x", "code_hash": "y"}])
    assert rows[0]["policy"] == "baseline-none"


def test_sweep_summary_arithmetic():
    rows = [{"size": 1000, "policy": "none", "accuracy": a, "seed": s} for s, a in enumerate((60.0, 62.0, 67.0))]
    (summary,) = summarize_sweep(rows)
    assert summary["mean"] == pytest.approx(63.0) and summary["std"] == pytest.approx(np.std([60, 62, 67]))


# -- sample export ----------------------------------------------------------------


def test_grid_layout_arithmetic():
    imgs = np.zeros((64, 1, 32, 32), np.uint8)
    assert export.tile(imgs).shape == (1, 8 * 32 + 7 * export.PAD, 8 * 32 + 7 * export.PAD)
    assert export.grid_side() == 8 * 32 + 7 * export.PAD


def test_denormalize_preprocess_round_trip():
    x = np.random.default_rng(0).integers(0, 256, (5, 1, 32, 32), dtype=np.uint8)
    stats = compute_stats(x)
    assert np.array_equal(export.to_uint8(preprocess(x, stats), stats), x)
    assert np.abs(denormalize(preprocess(x, stats), stats) - x).max() < 1e-3


def test_identity_generator_grids_identical(tmp_path):
    raw = np.random.default_rng(1).integers(0, 256, (64, 1, 32, 32), dtype=np.uint8)
    stats = compute_stats(raw)
    g = Generator(GeneratorConfig(width=0.125), torch.Generator().manual_seed(0))
    sheet = export.export_samples_from_generator(g, preprocess(raw, stats), stats, tmp_path / "s.png")
    side = export.grid_side()
    left, right = sheet[:, :, :side], sheet[:, :, side + export.GAP:]
    assert np.array_equal(left, right)
    png = np.asarray(Image.open(tmp_path / "s.png"))
    assert png.shape == (side, 2 * side + export.GAP) and np.array_equal(png, sheet[0])
    assert np.array_equal(left[:, :32, :32], raw[0])


# -- command line ----------------------------------------------------------------


@pytest.fixture
def data_root(tmp_path, monkeypatch):
    root = tmp_path / "data"
    root.mkdir()
    x, y = toy_images(n_per_class=3, seed=0)
    xt, yt = toy_images(n_per_class=1, seed=1)
    write_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte", x[:, 0], y)
    write_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", xt[:, 0], yt)
    monkeypatch.setenv("ADVAUG_DATA_ROOT", str(root))
    return root


TINY = ["--width", "0.125", "--m", "8", "--n-iter", "1", "--subset-size", "20"]


def test_cli_train_export_report(tmp_path, data_root, capsys):
    out = tmp_path / "runs" / "l"
    assert cli.main(["train", *TINY, "--snapshot-epochs", "1", "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["policy"] == "model-l" and result["config"]["width"] == 0.125
    assert result["norm_stats"]["mean"] > 0
    png = tmp_path / "samples.png"
    assert cli.main(["export-samples", str(out / "gen_epoch1.ckpt"), str(png)]) == 0 and png.exists()
    sep = tmp_path / "runs" / "sep"
    assert cli.main(["train", *TINY, "--out", str(sep), "--generator", str(out / "gen_epoch1.ckpt")]) == 0
    assert json.loads((sep / "result.json").read_text())["policy"] == "separate-l"
    capsys.readouterr()
    assert cli.main(["report", str(tmp_path / "runs")]) == 0
    assert "model-l" in capsys.readouterr().out
    g, meta = load_generator(out / "gen_epoch1.ckpt")
    assert meta["epoch"] == 1 and g.config.width == 0.125


def test_cli_ablate_and_sweep(tmp_path, data_root):
    assert cli.main(["ablate", *TINY, "--ids", "a,b,d", "--out", str(tmp_path / "abl")]) == 0
    for k in "abd":
        assert json.loads((tmp_path / "abl" / f"{k}-s0" / "result.json").read_text())["ablation"] == k
    csv_path = tmp_path / "sweep.csv"
    assert cli.main(["sweep", *TINY, "--sizes", "10,20", "--policies", "none,light", "--csv", str(csv_path),
                     "--out", str(tmp_path / "sw")]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "size,policy,accuracy,seed" and len(lines) == 5


def test_cli_errors_exit_nonzero(tmp_path, data_root, capsys):
    assert cli.main(["report", str(tmp_path / "empty")]) != 0
    assert "no runs" in capsys.readouterr().err
    assert cli.main(["train", *TINY, "--ablation", "q", "--out", str(tmp_path / "x")]) != 0
    assert cli.main(["train", *TINY, "--out", str(tmp_path / "y"), "--generator", str(tmp_path / "none.ckpt")]) != 0


def test_cli_describe_and_grad_check(capsys):
    assert cli.main(["describe", "--width", "0.25"]) == 0
    text = capsys.readouterr().out
    assert "classifier" in text and "encoder" in text
    assert cli.main(["grad-check", "--instances", "2", "--skip-generator"]) == 0
    assert "PASS" in capsys.readouterr().out
