"""Small configurations and datasets shared by the test modules."""

from plantvit import synthetic
from plantvit.data import in_memory_index
from plantvit.model import ModelConfig
from plantvit.training import DataSplits

# smallest config exercising every block; 4 tokens at 16x16 input
TINY = dict(input_size=16, stem_channels=4, stage_formation=(1, 1, 1), stage_channels=(4, 8, 8), patch_size=1,
            embed_dim=8, ffn_dim=16, num_classes=2, cbam_reduction=4)

# desk-scale trainable config on 32x32 images: 16 tokens of width 64, ~48K params
SMALL = dict(input_size=32, stem_channels=16, stage_channels=(16, 32, 64), patch_size=1, embed_dim=64,
             ffn_dim=128, num_classes=4)


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


def small(**kw):
    return ModelConfig(**{**SMALL, **kw})


def blob_splits(n_per_class=64, classes=4, size=32, seed=0, batch_size=64, augment=None):
    images, labels = synthetic.blobs(n_per_class, classes, size, seed=seed)
    names = [f"c{i}" for i in range(classes)]
    index, loader = in_memory_index(images, labels, names, seed=seed)
    return DataSplits(index, loader, batch_size, augment, seed)
