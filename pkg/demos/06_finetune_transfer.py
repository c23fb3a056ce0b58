"""Backbone transfer between two related texture tasks.

A model trained on four stripe orientations (task A) is re-headed for two
orientations under a darker palette (task B). We count epochs until val
accuracy reaches 95%, from the transferred weights and from scratch.
"""

import logging
import tempfile

from plantvit.experiments import finetune_study
from plantvit.model import ModelConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("plantvit.training").setLevel(logging.WARNING)

base = ModelConfig(input_size=32, stem_channels=16, stage_channels=(16, 32, 64), patch_size=1, embed_dim=64,
                   ffn_dim=128)
with tempfile.TemporaryDirectory() as tmp:
    result = finetune_study(base, tmp, seeds=(0, 1, 2))
print(f"pretrained: {result.pretrained} (median {result.median_pretrained})")
print(f"scratch:    {result.scratch} (median {result.median_scratch})")
