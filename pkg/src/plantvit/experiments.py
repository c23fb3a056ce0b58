"""Desk-scale studies on the procedural datasets.

Both studies train from scratch on in-memory data, so they need no files
and are reproducible from their seeds alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synthetic
from .data import AugmentConfig, in_memory_index
from .metrics import evaluate
from .model import ModelConfig, build_model
from .training import DataSplits, TrainConfig, finetune_init, fit, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

ABLATION_VARIANTS = {
    "full": dict(cbam_enabled=True, stage_formation=(1, 2, 4)),
    "cbam_111": dict(cbam_enabled=True, stage_formation=(1, 1, 1)),
    "no_cbam_124": dict(cbam_enabled=False, stage_formation=(1, 2, 4)),
}


def splits_from_arrays(images, labels, classes, seed=0, batch_size=64) -> DataSplits:
    index, loader = in_memory_index(images, labels, classes, seed=seed)
    return DataSplits(index, loader, batch_size, None, seed)


@dataclass
class AblationResult:
    accuracy: dict = field(default_factory=dict)  # variant -> [test acc per seed]

    def median(self, variant: str) -> float:
        return float(np.median(self.accuracy[variant]))

    def ordering_holds(self) -> bool:
        full = self.median("full")
        return full >= self.median("cbam_111") and full >= self.median("no_cbam_124")


def ablation_study(base: ModelConfig, seeds=(0, 1, 2), n_per_class=500, epochs=40, data_seed=0,
                   variants=ABLATION_VARIANTS, augment=True) -> AblationResult:
    """Test accuracy of each variant on one fixed windowed-texture dataset, per seed.

    The dataset and split are fixed by ``data_seed``; ``seeds`` vary the
    initialization, shuffle order, augmentation draws and dropout. The
    texture families are flip/rotation invariant, so the default
    augmentation stack is label preserving here.
    """
    images, labels = synthetic.windowed_textures(n_per_class, seed=data_seed)
    classes = list(synthetic.FAMILIES)
    base = base.replace(num_classes=len(classes))
    result = AblationResult()
    for name, overrides in variants.items():
        for seed in seeds:
            data = splits_from_arrays(images, labels, classes, seed=data_seed)
            data.seed = seed
            data.augment = AugmentConfig() if augment else None
            model = build_model(base.replace(seed=seed, **overrides))
            fit(model, data, TrainConfig(max_epochs=epochs, seed=seed, augment=augment))
            rep, _ = evaluate(model, data.stream("test"), classes)
            result.accuracy.setdefault(name, []).append(rep.accuracy)
            log.info("ablation %s seed %d test_acc=%.4f", name, seed, rep.accuracy)
    return result


class _Reached(Exception):
    pass


def epochs_to_target(model, data: DataSplits, target=0.95, max_epochs=30, seed=0, lr=1e-3) -> int:
    """First epoch whose val accuracy reaches ``target``; ``max_epochs + 1`` if never."""

    def check(epoch, _model, row):
        if row["val_acc"] >= target:
            raise _Reached(epoch)

    try:
        fit(model, data, TrainConfig(max_epochs=max_epochs, seed=seed, lr=lr, augment=False), on_epoch_end=check)
    except _Reached as hit:
        return int(hit.args[0])
    return max_epochs + 1


@dataclass
class FinetuneResult:
    pretrained: list
    scratch: list

    @property
    def median_pretrained(self) -> float:
        return float(np.median(self.pretrained))

    @property
    def median_scratch(self) -> float:
        return float(np.median(self.scratch))


def finetune_study(base: ModelConfig, workdir, seeds=(0, 1, 2, 3, 4), source_epochs=15,
                   target=0.95, max_epochs=30) -> FinetuneResult:
    """Epochs to ``target`` on task B, from a task-A checkpoint vs from scratch."""
    a_images, a_labels, a_names = synthetic.task_a()
    b_images, b_labels, b_names = synthetic.task_b()
    source = build_model(base.replace(num_classes=len(a_names), seed=100))
    fit(source, splits_from_arrays(a_images, a_labels, a_names), TrainConfig(max_epochs=source_epochs,
                                                                               augment=False))
    path = Path(workdir) / "task_a.mpvt"
    save_checkpoint(source, path, class_names=a_names)
    checkpoint = load_checkpoint(path)
    pre, scratch = [], []
    for seed in seeds:
        data = splits_from_arrays(b_images, b_labels, b_names, seed=0)
        data.seed = seed
        pre.append(epochs_to_target(finetune_init(checkpoint, len(b_names), seed=seed), data, target,
                                    max_epochs, seed))
        scratch.append(epochs_to_target(build_model(base.replace(num_classes=len(b_names), seed=seed)), data,
                                        target, max_epochs, seed))
        log.info("finetune seed %d: pretrained %d epochs, scratch %d epochs", seed, pre[-1], scratch[-1])
    return FinetuneResult(pre, scratch)
