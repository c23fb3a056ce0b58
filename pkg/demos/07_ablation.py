"""CBAM and stage-depth ablation on a procedural texture dataset.

A reduced version of the acceptance study: fewer images, epochs and seeds,
so it runs in about two minutes. Absolute numbers are not comparable to large
natural-image benchmarks.

At this budget the augmented task is far from converged, and one seed's
accuracy moves by more than the gap between variants. A single run here says
nothing about the ordering; seed 1 at 300 images per class and 30 epochs puts
the full model below both ablations (0.53 vs 0.66). Use ``seeds=(0, 1, 2)``,
500 images per class and 40 epochs for the full protocol (about 10 minutes).
"""

import logging

from plantvit.experiments import ablation_study
from plantvit.model import ModelConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("plantvit.training").setLevel(logging.WARNING)

base = ModelConfig(input_size=32, stem_channels=16, stage_channels=(16, 32, 64), patch_size=1, embed_dim=64,
                   ffn_dim=128)
result = ablation_study(base, seeds=(1,), n_per_class=300, epochs=30)
for name, accs in result.accuracy.items():
    print(f"{name:<12} test acc {accs}")
print("full model at least as good as both ablations:", result.ordering_holds())
