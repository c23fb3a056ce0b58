"""Loss, optimizer, plateau schedule, early stopping, checkpoints and fine-tuning."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import AugmentConfig, DatasetIndex, batches
from .errors import (CheckpointCorruptError, CheckpointFormatError, CheckpointNotFoundError, ConfigError,
                     ConfigMismatchError, DataError, NumericError)
from .model import ModelConfig, PlantViT, build_model

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")
HEAD_PREFIX = "head.fc."


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_min: float = 1e-7
    improvement_threshold: float = 1e-5
    early_stop_patience: int = 50
    weight_decay: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 64
    augment: bool = True
    seed: int = 0

    def validate(self) -> "TrainConfig":
        def fail(name, msg):
            raise ConfigError(f"TrainConfig.{name}: {msg}")

        if not (self.lr > 0 and math.isfinite(self.lr)):
            fail("lr", "must be a positive finite number")
        if not 0 < self.lr_factor < 1:
            fail("lr_factor", "must be in (0, 1)")
        if not 0 <= self.lr_min < self.lr:
            fail("lr_min", "must be >= 0 and below lr")
        if self.improvement_threshold < 0:
            fail("improvement_threshold", "must be >= 0")
        if self.weight_decay < 0:
            fail("weight_decay", "must be >= 0")
        for name in ("lr_patience", "early_stop_patience", "max_epochs", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                fail(name, f"must be a positive integer, got {v!r}")
        return self


# ---------------------------------------------------------------------------
# loss and optimizer
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the target class (log-sum-exp form)."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise DataError(f"labels shape {labels.shape} does not match batch size {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise DataError(f"labels must lie in [0, {C})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = z - m - np.log(s)
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def back(g):
        grad = e / s
        grad[rows, labels] -= 1.0
        return (grad * (g / B),)

    return ag.record(np.asarray(loss), (logits,), back, "cross_entropy")


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Decay multiplies eligible parameters by ``1 - lr * weight_decay`` before
    the moment update; parameters with ``decay=False`` (biases, BN and LN
    affine terms) are skipped.
    """

    def __init__(self, params, weight_decay: float = 0.0):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, lr: float):
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError("non-finite gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - ADAM_BETA1 ** t
        c2 = 1.0 - ADAM_BETA2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if p.decay and self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def adam_step(params, optimizer: Adam, lr: float):
    """Functional-style alias: one Adam update of ``params`` using their ``grad``."""
    if list(params) != optimizer.params:
        raise ConfigError("optimizer was built for a different parameter list")
    optimizer.step(lr)


# ---------------------------------------------------------------------------
# schedule and stopping
# ---------------------------------------------------------------------------

class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without improvement.

    Improvement means ``acc > best + threshold``; the first observation
    always improves. The counter resets after each reduction and the LR
    never falls below ``min_lr``.
    """

    def __init__(self, lr, factor=0.5, patience=10, min_lr=1e-7, threshold=1e-5):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.min_lr, self.threshold = min_lr, threshold
        self.best = -math.inf
        self.wait = 0

    def step(self, acc: float) -> float:
        if acc > self.best + self.threshold:
            self.best = acc
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


class EarlyStopper:
    """Track the best validation accuracy and signal a stop after ``patience`` flat epochs."""

    def __init__(self, patience=50, threshold=1e-5):
        self.patience, self.threshold = patience, threshold
        self.best = -math.inf
        self.best_epoch = 0
        self.wait = 0
        self.snapshot: Optional[dict] = None

    def step(self, acc: float, epoch: int, model=None) -> bool:
        if acc > self.best + self.threshold:
            self.best = acc
            self.best_epoch = epoch
            self.wait = 0
            if model is not None:
                self.snapshot = model.state_dict()
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainState:
    optimizer: Adam
    scheduler: PlateauScheduler
    stopper: EarlyStopper
    history: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def lr(self) -> float:
        return self.scheduler.lr

    @property
    def best_val_acc(self) -> float:
        return self.stopper.best

    @property
    def best_epoch(self) -> int:
        return self.stopper.best_epoch

    @classmethod
    def create(cls, model, cfg: TrainConfig) -> "TrainState":
        return cls(Adam(model.parameters(), cfg.weight_decay),
                   PlateauScheduler(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_min, cfg.improvement_threshold),
                   EarlyStopper(cfg.early_stop_patience, cfg.improvement_threshold))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class DataSplits:
    """An indexed, split dataset plus how to load and batch it."""

    index: DatasetIndex
    loader: Callable
    batch_size: int = 64
    augment: Optional[AugmentConfig] = None
    seed: int = 0
    workers: int = 1

    def stream(self, split_name: str, epoch: int = 0):
        aug = self.augment if split_name == "train" else None
        return batches(self.index, split_name, self.loader, self.batch_size, self.seed, epoch, aug, self.workers)


def infer(model: PlantViT, stream) -> tuple:
    """Eval-mode logits over a batch stream: ``(logits [N, C], labels [N], paths)``."""
    was_training = model.training
    model.eval()
    logits, labels, paths = [], [], []
    try:
        with ag.no_grad():
            for batch in stream:
                logits.append(model(batch.pixels).data)
                labels.append(batch.labels)
                paths.extend(batch.paths)
    finally:
        model.train(was_training)
    if not logits:
        raise DataError("empty batch stream")
    return np.concatenate(logits), np.concatenate(labels), paths


def loss_and_accuracy(logits: np.ndarray, labels: np.ndarray) -> tuple:
    with ag.no_grad():
        loss = float(cross_entropy(Tensor(logits), labels).data)
    return loss, float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate_split(model, stream) -> tuple:
    logits, labels, _ = infer(model, stream)
    return loss_and_accuracy(logits, labels)


def train_epoch(model, stream, state: TrainState, rng: np.random.Generator) -> tuple:
    model.train()
    total_loss, correct, seen = 0.0, 0, 0
    for batch in stream:
        logits = model(batch.pixels, rng)
        loss = cross_entropy(logits, batch.labels)
        model.zero_grad()
        ag.backward(loss)
        state.optimizer.step(state.lr)
        n = len(batch.labels)
        total_loss += float(loss.data) * n
        correct += int(np.sum(np.argmax(logits.data, axis=1) == batch.labels))
        seen += n
    if seen == 0:
        raise DataError("training split produced no batches")
    return total_loss / seen, correct / seen


@dataclass
class FitResult:
    model: PlantViT
    state: TrainState

    @property
    def history(self) -> list:
        return self.state.history


def fit(model: PlantViT, data: DataSplits, cfg: TrainConfig,
        val_fn: Optional[Callable] = None, on_epoch_end: Optional[Callable] = None,
        state: Optional[TrainState] = None) -> FitResult:
    """Train until early stopping or ``max_epochs``, then restore the best weights.

    ``val_fn(epoch, model) -> (val_loss, val_acc)`` replaces the validation
    pass when given. ``on_epoch_end(epoch, model, row)`` runs after the
    history row is appended and before the schedule/stopper update.
    """
    cfg.validate()
    state = state or TrainState.create(model, cfg)
    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch, 7919, 1])  # dropout stream, disjoint from data keys
        lr = state.lr
        try:
            train_loss, train_acc = train_epoch(model, data.stream("train", epoch), state, rng)
            if val_fn is not None:
                val_loss, val_acc = val_fn(epoch, model)
            else:
                val_loss, val_acc = evaluate_split(model, data.stream("val"))
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from exc
        except DataError as exc:
            raise type(exc)(f"epoch {epoch}: {exc}") from exc
        row = dict(epoch=epoch, train_loss=train_loss, train_acc=train_acc,
                   val_loss=val_loss, val_acc=val_acc, lr=lr)
        state.history.append(row)
        log.info("epoch %d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.3g",
                 epoch, train_loss, train_acc, val_loss, val_acc, lr)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, row)
        state.scheduler.step(val_acc)
        if state.stopper.step(val_acc, epoch, model):
            state.stopped_early = True
            break
    if state.stopper.snapshot is not None:
        model.load_state_dict(state.stopper.snapshot)
    return FitResult(model, state)


def write_history_csv(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"MPVT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    model: PlantViT
    config: ModelConfig
    class_names: Optional[list]
    meta: dict
    optimizer_state: Optional[dict] = None


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("<", "=", "|") else arr.dtype
    dt = np.dtype(dt.str.replace("=", "<"))
    if dt not in _DTYPE_CODES:
        raise ConfigError(f"cannot serialize dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(dt, copy=False).tobytes()


def save_checkpoint(model: PlantViT, path, state: Optional[TrainState] = None,
                    class_names: Optional[list] = None, meta: Optional[dict] = None) -> None:
    """Write parameters, BN buffers and (optionally) optimizer state to ``path``."""
    tensors = list(model.state_dict().items())
    header = {"model_config": model.config.to_dict(), "arch_hash": model.config.arch_hash(),
              "class_names": list(class_names) if class_names is not None else None,
              "meta": meta or {}}
    if state is not None:
        names = [n for n, _ in model.named_parameters()]
        opt = state.optimizer
        header["train_state"] = {"step": opt.step_count, "lr": state.lr,
                                 "best_val_acc": state.best_val_acc, "best_epoch": state.best_epoch}
        tensors += [(f"optim.m.{n}", m) for n, m in zip(names, opt.m)]
        tensors += [(f"optim.v.{n}", v) for n, v in zip(names, opt.v)]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(n, a) for n, a in tensors]
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
    os.replace(tmp, path)


def _read_checkpoint(path) -> tuple:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointNotFoundError(f"{path}: no such checkpoint") from exc
    if len(data) < 6 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    if len(data) < 14:
        raise CheckpointCorruptError(f"{path}: truncated")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    try:
        off = 6
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        header = json.loads(data[off:off + n].decode("utf-8"))
        off += n
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            code, rank = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + nbytes > len(data) - 4:
                raise ValueError("payload overruns file")
            tensors[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                                          offset=off).reshape(shape).copy()
            off += nbytes
        if off != len(data) - 4:
            raise ValueError("trailing bytes before checksum")
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed tensor table ({exc})") from exc
    return header, tensors


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint and rebuild its model.

    ``expected`` guards against loading into a different architecture: its
    layout hash must equal the stored one.
    """
    header, tensors = _read_checkpoint(path)
    config = ModelConfig.from_dict(header["model_config"])
    if config.arch_hash() != header.get("arch_hash"):
        raise CheckpointCorruptError(f"{path}: stored config does not match its hash")
    if expected is not None and expected.arch_hash() != config.arch_hash():
        raise ConfigMismatchError(f"{path}: checkpoint architecture differs from requested configuration")
    model = PlantViT(config)
    model_state = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    try:
        model.load_state_dict(model_state)
    except ConfigError as exc:
        raise CheckpointCorruptError(f"{path}: {exc}") from exc
    model.eval()
    opt_state = None
    if "train_state" in header:
        opt_state = dict(header["train_state"])
        opt_state["m"] = {k[len("optim.m."):]: v for k, v in tensors.items() if k.startswith("optim.m.")}
        opt_state["v"] = {k[len("optim.v."):]: v for k, v in tensors.items() if k.startswith("optim.v.")}
    return Checkpoint(model, config, header.get("class_names"), header.get("meta", {}), opt_state)


def finetune_init(checkpoint, new_num_classes: int, seed: int = 0,
                  input_size: Optional[int] = None) -> PlantViT:
    """New model with every backbone/encoder tensor copied and a fresh classifier head."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if new_num_classes < 2:
        raise ConfigError(f"new_num_classes must be >= 2, got {new_num_classes}")
    src = checkpoint.config
    cfg = src.replace(num_classes=new_num_classes, seed=seed,
                      input_size=input_size if input_size is not None else src.input_size)
    cfg.validate()
    if cfg.num_tokens != src.num_tokens:
        raise ConfigError(f"token count {cfg.num_tokens} differs from checkpoint's {src.num_tokens}; "
                          "positional table cannot be transferred")
    model = build_model(cfg)
    state = {k: v for k, v in checkpoint.model.state_dict().items() if not k.startswith(HEAD_PREFIX)}
    model.load_state_dict(state, strict=False)
    return model.train()
