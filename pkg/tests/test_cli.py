import json

import numpy as np
import pytest

from plantvit import synthetic
from plantvit.cli import main, resolve_config
from plantvit.data import FileLoader, batches, index_dataset, split
from plantvit.errors import ConfigError
from plantvit.metrics import evaluate
from plantvit.training import load_checkpoint

from fixtures import SMALL

SMALL_SETS = [f"model.{k}={json.dumps(list(v) if isinstance(v, tuple) else v)}"
              for k, v in SMALL.items() if k != "num_classes"]


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _sets(*extra):
    return [a for s in list(SMALL_SETS) + list(extra) for a in ("--set", s)]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    images, labels = synthetic.blobs(16, 3, 32, seed=2)
    return synthetic.write_image_folder(images, labels, ["red", "green", "blue"], tmp_path_factory.mktemp("ds"))


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--root", str(dataset), "--out", str(out), "-q"]
                + _sets("train.max_epochs=3", "train.augment=false"))
    assert code == 0
    return out


def test_summary_default_budget(capsys):
    code, out, _ = _run(capsys, "summary")
    info = json.loads(out.strip().splitlines()[-1])
    assert code == 0 and 600_000 <= info["total_params"] <= 780_000 and info["num_tokens"] == 196
    assert "patch_embed" in out and "total" in out


def test_summary_no_cbam_smaller(capsys):
    _, full, _ = _run(capsys, "summary")
    _, ablated, _ = _run(capsys, "summary", "--ablation", "no-cbam")
    total = lambda text: json.loads(text.strip().splitlines()[-1])["total_params"]
    assert total(ablated) < total(full)


def test_summary_tiny_matches_closed_form(capsys):
    from test_model import closed_form
    from fixtures import tiny
    cfg = tiny()
    sets = [f"model.{k}={json.dumps(list(v) if isinstance(v, tuple) else v)}" for k, v in cfg.to_dict().items()]
    _, out, _ = _run(capsys, "summary", *[a for s in sets for a in ("--set", s)])
    assert json.loads(out.strip().splitlines()[-1])["total_params"] == closed_form(cfg)


def test_train_writes_artifacts(trained):
    for name in ("checkpoint.mpvt", "history.csv", "val_report.json", "val_confusion.csv", "manifest.csv",
                 "skipped.csv"):
        assert (trained / name).exists(), name
    lines = (trained / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr" and len(lines) == 4


def test_train_reports_skipped_files(tmp_path, capsys):
    images, labels = synthetic.blobs(8, 2, 32, seed=4)
    root = synthetic.write_image_folder(images, labels, ["a", "b"], tmp_path / "ds")
    (root / "a" / "broken.png").write_bytes(b"not an image")
    code, _, _ = _run(capsys, "train", "--root", str(root), "--out", str(tmp_path / "run"), "-q",
                      *_sets("train.max_epochs=1", "train.augment=false"))
    lines = (tmp_path / "run" / "skipped.csv").read_text().splitlines()
    assert code == 0 and lines[0] == "path,reason" and len(lines) == 2 and "broken.png" in lines[1]
    manifest = (tmp_path / "run" / "manifest.csv").read_text()
    assert "broken.png" not in manifest and manifest.count("\n") == 17


def test_eval_replays_best_val_accuracy(trained, capsys):
    ck = load_checkpoint(trained / "checkpoint.mpvt")
    code, out, _ = _run(capsys, "eval", "--checkpoint", str(trained / "checkpoint.mpvt"), "--split", "val",
                        "--out", str(trained / "e1"))
    assert code == 0
    assert json.loads(out.strip().splitlines()[-1])["accuracy"] == ck.meta["best_val_acc"]


def test_eval_twice_byte_identical(trained, capsys):
    ckpt = str(trained / "checkpoint.mpvt")
    for d in ("a", "b"):
        assert _run(capsys, "eval", "--checkpoint", ckpt, "--out", str(trained / d))[0] == 0
    for name in ("test_report.json", "test_confusion.csv"):
        assert (trained / "a" / name).read_bytes() == (trained / "b" / name).read_bytes()


def test_eval_corrupt_checkpoint(trained, tmp_path, capsys):
    raw = (trained / "checkpoint.mpvt").read_bytes()
    bad = tmp_path / "bad.mpvt"
    bad.write_bytes(raw[: len(raw) // 3])
    code, _, err = _run(capsys, "eval", "--checkpoint", str(bad))
    assert code == 3 and err.startswith("ERROR CHECKPOINT_CORRUPT") and len(err.strip().splitlines()) == 1


def test_eval_formation_mismatch(trained, capsys):
    code, _, err = _run(capsys, "eval", "--checkpoint", str(trained / "checkpoint.mpvt"), "--formation", "1-2-4",
                        "--set", "model.stage_formation=[1,1,1]")
    assert code == 0 or "CONFIG_MISMATCH" in err
    code, _, err = _run(capsys, "eval", "--checkpoint", str(trained / "checkpoint.mpvt"), "--ablation", "no-cbam")
    assert code == 3 and "CONFIG_MISMATCH" in err


def test_missing_root(capsys, tmp_path):
    code, _, err = _run(capsys, "train", "--root", str(tmp_path / "nope"), "-q")
    assert code == 2 and err.split()[:2] == ["ERROR", "DATASET_NOT_FOUND"]


def test_ablation_case_one_configuration():
    cfg = resolve_config(ablation="no-cbam", formation="1-1-1")
    assert cfg.model.cbam_enabled is False and cfg.model.stage_formation == (1, 1, 1)
    full = resolve_config(ablation="full", formation="1-2-4")
    assert full.model.cbam_enabled is True and full.model.stage_formation == (1, 2, 4)


def test_train_ablation_checkpoint_refuses_other_formation(dataset, tmp_path, capsys):
    out = tmp_path / "abl"
    code, _, _ = _run(capsys, "train", "--root", str(dataset), "--out", str(out), "-q", "--ablation", "no-cbam",
                      "--formation", "1-1-1", *_sets("train.max_epochs=1", "train.augment=false"))
    assert code == 0
    ck = load_checkpoint(out / "checkpoint.mpvt")
    assert not ck.config.cbam_enabled and ck.config.stage_formation == (1, 1, 1)
    code, _, err = _run(capsys, "eval", "--checkpoint", str(out / "checkpoint.mpvt"), "--formation", "1-2-4")
    assert code == 3 and "CONFIG_MISMATCH" in err


def test_infer_lines_order_and_probabilities(trained, dataset, capsys):
    paths = [str(dataset / "blue" / "00040.png"), str(dataset / "red" / "00001.png"),
             str(dataset / "green" / "00020.png")]
    code, out, _ = _run(capsys, "infer", "--checkpoint", str(trained / "checkpoint.mpvt"), "--topk", "3", *paths)
    rows = [json.loads(l) for l in out.strip().splitlines()]
    assert code == 0 and [r["path"] for r in rows] == paths
    for r in rows:
        assert len(r["topk"]) == 3 and abs(sum(t["prob"] for t in r["topk"]) - 1) <= 1e-4
        probs = [t["prob"] for t in r["topk"]]
        assert probs == sorted(probs, reverse=True)


def test_infer_top1_matches_evaluate(trained, dataset, capsys):
    ck = load_checkpoint(trained / "checkpoint.mpvt")
    index = split(index_dataset(dataset), 0)
    test_records = index.subset("test")
    stream = list(batches(index, "test", FileLoader(32), 64))
    logits = np.concatenate([ck.model(b.pixels).data for b in stream])
    preds = np.argmax(logits, axis=1)
    code, out, _ = _run(capsys, "infer", "--checkpoint", str(trained / "checkpoint.mpvt"),
                        *[r.path for r in test_records])
    rows = [json.loads(l) for l in out.strip().splitlines()]
    assert [r["topk"][0]["class"] for r in rows] == [ck.class_names[p] for p in preds]
    rep, _ = evaluate(ck.model, iter(stream), ck.class_names)
    assert rep.accuracy == np.mean(preds == np.concatenate([b.labels for b in stream]))


def test_infer_undecodable(trained, dataset, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"nope")
    good = str(dataset / "red" / "00000.png")
    code, out, _ = _run(capsys, "infer", "--checkpoint", str(trained / "checkpoint.mpvt"), str(bad), good)
    rows = [json.loads(l) for l in out.strip().splitlines()]
    assert code == 0 and rows[0]["error"] == "IMAGE_UNDECODABLE" and "topk" in rows[1]
    code, _, err = _run(capsys, "infer", "--checkpoint", str(trained / "checkpoint.mpvt"), str(bad))
    assert code == 2 and err.startswith("ERROR")


def test_pretrained_route(trained, dataset, tmp_path, capsys):
    out = tmp_path / "ft"
    code, _, _ = _run(capsys, "train", "--root", str(dataset), "--out", str(out), "-q", "--pretrained",
                      str(trained / "checkpoint.mpvt"), "--set", "train.max_epochs=1", "--set", "train.augment=false")
    assert code == 0
    src, ft = load_checkpoint(trained / "checkpoint.mpvt"), load_checkpoint(out / "checkpoint.mpvt")
    assert ft.meta["pretrained"] and ft.config.arch_hash() == src.config.arch_hash()


@pytest.mark.parametrize("argv", [
    ["summary", "--set", "model.bogus=1"],
    ["summary", "--set", "nosection"],
    ["summary", "--set", "extra.key=1"],
    ["summary", "--set", "train.lr_factor=1.5"],
    ["summary", "--set", "model.stage_channels=[32,64]"],
    ["summary", "--formation", "2-2-2"],
    ["eval"],
])
def test_config_errors_exit_4(argv, capsys):
    code, _, err = _run(capsys, *argv)
    assert code == 4 and err.startswith("ERROR CONFIG_INVALID")


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"embed_dim": 128}, "train": {"lr": 0.01}, "data": {"split_seed": 3}}))
    cfg = resolve_config(path, ["train.lr=0.0005"], seed=7)
    assert cfg.model.embed_dim == 128 and cfg.train.lr == 0.0005 and cfg.data.split_seed == 3
    assert cfg.model.seed == 7 and cfg.train.seed == 7
    path.write_text(json.dumps({"model": {"embed_dim": 128}, "typo": {}}))
    with pytest.raises(ConfigError):
        resolve_config(path)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_numeric_failure_exit_5(dataset, tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--root", str(dataset), "--out", str(tmp_path / "nan"), "-q",
                        *_sets("train.max_epochs=2", "train.augment=false", "train.lr=1e38"))
    assert code == 5 and err.startswith("ERROR NUMERIC_ERROR")
