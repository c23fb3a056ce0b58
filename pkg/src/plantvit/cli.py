"""Command-line front end: ``train``, ``eval``, ``infer`` and ``summary``.

Configuration is a JSON file with the sections ``model``, ``train``,
``data`` and ``run``; ``--set section.key=value`` overrides single fields
(values are parsed as JSON, falling back to plain strings). Failures print
one line ``ERROR <CLASS> <message>`` to stderr and exit with the class's
status: 2 data, 3 checkpoint, 4 config, 5 numeric.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .data import SPLITS, AugmentConfig, FileLoader, batches, decode_image, index_dataset, normalize, resize, split
from .errors import ConfigError, ConfigMismatchError, DataError, PlantViTError
from .metrics import evaluate, write_confusion_csv
from .model import ModelConfig, build_model, predict, summary
from .training import (DataSplits, TrainConfig, finetune_init, fit, load_checkpoint, save_checkpoint,
                       write_history_csv)

log = logging.getLogger("plantvit")

CHECKPOINT_NAME = "checkpoint.mpvt"
HISTORY_NAME = "history.csv"
FORMATIONS = {"1-1-1": (1, 1, 1), "1-2-4": (1, 2, 4)}


@dataclass
class DataConfig:
    root: Optional[str] = None
    split_seed: int = 0
    workers: int = 1

    def validate(self):
        if not isinstance(self.split_seed, int) or self.split_seed < 0:
            raise ConfigError(f"data.split_seed must be a non-negative integer, got {self.split_seed!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"data.workers must be a positive integer, got {self.workers!r}")
        return self


@dataclass
class RunOptions:
    out: str = "run"
    checkpoint: Optional[str] = None
    pretrained: Optional[str] = None
    split: str = "test"
    topk: int = 1

    def validate(self):
        if self.split not in SPLITS:
            raise ConfigError(f"run.split must be one of {SPLITS}, got {self.split!r}")
        if not isinstance(self.topk, int) or self.topk < 1:
            raise ConfigError(f"run.topk must be a positive integer, got {self.topk!r}")
        return self


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig, "run": RunOptions}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    run: RunOptions
    explicit: set = field(default_factory=set)

    def explicit_in(self, section: str) -> dict:
        obj = getattr(self, section)
        return {k.split(".", 1)[1]: getattr(obj, k.split(".", 1)[1])
                for k in self.explicit if k.startswith(section + ".")}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path=None, sets=(), ablation=None, formation=None, seed=None, **run_flags) -> RunConfig:
    """Merge the JSON file, ``--set`` overrides and shortcut flags, then validate every section."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    values = {s: {} for s in SECTIONS}
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        values[section].update(body)
    for item in sets:
        key, sep, text = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise ConfigError(f"--set expects section.key=value with a known section, got {item!r}")
        values[section][name] = _parse_value(text)
    if ablation is not None:
        values["model"]["cbam_enabled"] = ablation == "full"
    if formation is not None:
        values["model"]["stage_formation"] = list(FORMATIONS[formation])
    if seed is not None:
        values["model"]["seed"] = seed
        values["train"]["seed"] = seed
    for name, value in run_flags.items():
        if value is not None:
            values["run"][name] = value

    built = {}
    for section, cls in SECTIONS.items():
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values[section]) - known
        if unknown:
            raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
        try:
            built[section] = cls(**values[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from exc
        built[section].validate()
    explicit = {f"{s}.{k}" for s, body in values.items() for k in body}
    return RunConfig(explicit=explicit, **built)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write(path: Path, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_train(cfg: RunConfig) -> int:
    if cfg.data.root is None:
        raise ConfigError("data.root is required for train")
    index = split(index_dataset(cfg.data.root, workers=cfg.data.workers), cfg.data.split_seed)
    num_classes = index.num_classes
    if "model.num_classes" in cfg.explicit and cfg.model.num_classes != num_classes:
        raise ConfigError(f"model.num_classes={cfg.model.num_classes} but the dataset has {num_classes} classes")
    if cfg.run.pretrained:
        size = cfg.model.input_size if "model.input_size" in cfg.explicit else None
        model = finetune_init(cfg.run.pretrained, num_classes, seed=cfg.model.seed, input_size=size)
    else:
        model = build_model(cfg.model.replace(num_classes=num_classes))
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    index.write_manifest(out / "manifest.csv")
    index.write_skipped(out / "skipped.csv")

    data = DataSplits(index, FileLoader(model.config.input_size), cfg.train.batch_size,
                      AugmentConfig() if cfg.train.augment else None, cfg.train.seed, cfg.data.workers)
    result = fit(model, data, cfg.train)
    state = result.state
    meta = {"train": dataclasses.asdict(cfg.train),
            "data": {"root": cfg.data.root, "split_seed": cfg.data.split_seed},
            "best_epoch": state.best_epoch, "best_val_acc": state.best_val_acc,
            "epochs_run": len(state.history), "stopped_early": state.stopped_early,
            "pretrained": bool(cfg.run.pretrained)}
    save_checkpoint(model, out / CHECKPOINT_NAME, state, index.classes, meta)
    write_history_csv(result.history, out / HISTORY_NAME)
    rep, cm = evaluate(model, data.stream("val"), index.classes)
    _write(out / "val_report.json", rep.to_json())
    write_confusion_csv(cm, out / "val_confusion.csv", index.classes)
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_NAME), "epochs": len(state.history),
                      "best_epoch": state.best_epoch, "best_val_acc": state.best_val_acc,
                      "val_accuracy": rep.accuracy}))
    return 0


def _load_for(cfg: RunConfig):
    if not cfg.run.checkpoint:
        raise ConfigError("run.checkpoint (--checkpoint) is required")
    ck = load_checkpoint(cfg.run.checkpoint)
    overrides = {k: v for k, v in cfg.explicit_in("model").items() if k != "seed"}
    if overrides:
        try:
            expected = ck.config.replace(**overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if expected.arch_hash() != ck.config.arch_hash():
            diff = sorted(k for k in overrides if getattr(expected, k) != getattr(ck.config, k))
            raise ConfigMismatchError(f"{cfg.run.checkpoint}: requested model differs from checkpoint in {diff}")
    return ck


def cmd_eval(cfg: RunConfig) -> int:
    ck = _load_for(cfg)
    meta_data = ck.meta.get("data", {})
    root = cfg.data.root if "data.root" in cfg.explicit else meta_data.get("root")
    seed = cfg.data.split_seed if "data.split_seed" in cfg.explicit else meta_data.get("split_seed", 0)
    if root is None:
        raise ConfigError("data.root is required: checkpoint does not record a dataset")
    batch_size = (cfg.train.batch_size if "train.batch_size" in cfg.explicit
                  else ck.meta.get("train", {}).get("batch_size", cfg.train.batch_size))
    index = split(index_dataset(root, workers=cfg.data.workers), seed)
    if ck.class_names is not None and list(index.classes) != list(ck.class_names):
        raise DataError(f"dataset classes {index.classes} differ from checkpoint classes {ck.class_names}")
    stream = batches(index, cfg.run.split, FileLoader(ck.config.input_size), batch_size, workers=cfg.data.workers)
    rep, cm = evaluate(ck.model, stream, index.classes)
    out = Path(cfg.run.out) if "run.out" in cfg.explicit else Path(cfg.run.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    _write(out / f"{cfg.run.split}_report.json", rep.to_json())
    write_confusion_csv(cm, out / f"{cfg.run.split}_confusion.csv", index.classes)
    sys.stdout.write(rep.table())
    print(json.dumps({"split": cfg.run.split, "accuracy": rep.accuracy,
                      "report": str(out / f"{cfg.run.split}_report.json")}))
    return 0


def cmd_infer(cfg: RunConfig, images) -> int:
    ck = _load_for(cfg)
    C = ck.config.num_classes
    names = ck.class_names or [str(i) for i in range(C)]
    k = min(cfg.run.topk, C)
    size = ck.config.input_size
    batch_size = ck.meta.get("train", {}).get("batch_size", 64)
    decoded = [decode_image(p) for p in images]
    good = [i for i, img in enumerate(decoded) if img is not None]
    probs = {}
    for start in range(0, len(good), batch_size):
        chunk = good[start:start + batch_size]
        x = np.stack([normalize(resize(decoded[i], size)) for i in chunk])
        with ag.no_grad():
            p, _ = predict(ck.model(x))
        probs.update(zip(chunk, p))
    for i, path in enumerate(images):
        if i not in probs:
            print(json.dumps({"path": str(path), "error": "IMAGE_UNDECODABLE"}))
            continue
        p = probs[i].astype(np.float64)
        top = np.argsort(-p, kind="stable")[:k]
        print(json.dumps({"path": str(path), "topk": [{"class": names[c], "prob": float(p[c])} for c in top]}))
    if not good:
        raise DataError("no input image could be decoded")
    return 0


def cmd_summary(cfg: RunConfig) -> int:
    info = summary(build_model(cfg.model))
    print(f"{'module':<12} {'output shape':<18} {'params':>10}")
    for row in info["rows"]:
        print(f"{row['module']:<12} {str(row['output_shape']):<18} {row['params']:>10,d}")
    print(f"{'total':<12} {'':<18} {info['total_params']:>10,d}  ({info['total_params'] / 1e6:.2f}M)")
    print(f"tokens L={info['num_tokens']}  embed d={info['embed_dim']}")
    print(json.dumps({"total_params": info["total_params"], "num_tokens": info["num_tokens"],
                      "embed_dim": info["embed_dim"], "arch_hash": info["arch_hash"]}))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    common.add_argument("--ablation", choices=("full", "no-cbam"))
    common.add_argument("--formation", choices=tuple(FORMATIONS))
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch log lines")

    parser = _Parser(prog="plantvit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="train on an image-folder dataset")
    p.add_argument("--root", help="dataset root (overrides data.root)")
    p.add_argument("--pretrained", help="checkpoint to fine-tune from")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint")
    p.add_argument("--root")
    p.add_argument("--split", choices=SPLITS)
    p = sub.add_parser("infer", parents=[common], help="top-k predictions for image files")
    p.add_argument("--checkpoint")
    p.add_argument("--topk", type=int)
    p.add_argument("images", nargs="+")
    sub.add_parser("summary", parents=[common], help="architecture table and parameter count")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not logging.getLogger().handlers:
            logging.basicConfig(format="%(message)s", stream=sys.stderr)
        log.setLevel(logging.WARNING if args.quiet else logging.INFO)
        sets = list(args.set)
        if getattr(args, "root", None):
            sets.append(f"data.root={json.dumps(args.root)}")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = resolve_config(args.config, sets, args.ablation, args.formation, args.seed, out=args.out,
                             checkpoint=getattr(args, "checkpoint", None),
                             pretrained=getattr(args, "pretrained", None),
                             split=getattr(args, "split", None), topk=getattr(args, "topk", None))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.images)
        return cmd_summary(cfg)
    except PlantViTError as exc:
        message = " ".join(str(exc).split())
        print(f"ERROR {exc.code} {message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
