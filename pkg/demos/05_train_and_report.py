"""Train a small model on colored blobs, checkpoint it, reload it and report metrics."""

import logging
import tempfile
from pathlib import Path

from plantvit import synthetic
from plantvit.data import in_memory_index
from plantvit.metrics import evaluate
from plantvit.model import ModelConfig, build_model
from plantvit.training import DataSplits, TrainConfig, fit, load_checkpoint, save_checkpoint

logging.basicConfig(level=logging.INFO, format="%(message)s")

images, labels = synthetic.blobs(48, num_classes=4, size=32, seed=0)
classes = ["red", "green", "blue", "yellow"]
index, loader = in_memory_index(images, labels, classes, seed=0)
data = DataSplits(index, loader, batch_size=16)

cfg = ModelConfig(input_size=32, stem_channels=16, stage_channels=(16, 32, 64), patch_size=1, embed_dim=64,
                  ffn_dim=128, num_classes=4)
model = build_model(cfg)
result = fit(model, data, TrainConfig(max_epochs=20, batch_size=16, augment=False))
print(f"best val acc {result.state.best_val_acc:.3f} at epoch {result.state.best_epoch}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "blobs.mpvt"
    save_checkpoint(model, path, result.state, class_names=classes)
    restored = load_checkpoint(path, expected=cfg)
    rep, cm = evaluate(restored.model, data.stream("test"), classes)
print(rep.table())
print("confusion matrix (rows true, columns predicted):")
print(cm)
