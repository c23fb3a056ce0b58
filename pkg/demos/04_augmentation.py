"""Render one texture image through the training augmentations.

Writes a 4x4 contact sheet to ``augmentations.png`` in the working directory.
"""

import cv2
import numpy as np

from plantvit import synthetic
from plantvit.data import AugmentConfig, augment

images, _ = synthetic.textures(1, kinds=("rings",), size=64, seed=3, noise=10)
rng = np.random.default_rng(0)
tiles = [images[0]] + [augment(images[0], rng, AugmentConfig()) for _ in range(15)]
rows = [np.concatenate(tiles[i:i + 4], axis=1) for i in range(0, 16, 4)]
sheet = np.concatenate(rows, axis=0)
cv2.imwrite("augmentations.png", cv2.cvtColor(sheet, cv2.COLOR_RGB2BGR))
print("first tile is the original; wrote augmentations.png", sheet.shape)
