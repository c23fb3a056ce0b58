"""Procedural image datasets for smoke tests, ablations and transfer experiments.

Every generator is a pure function of its arguments and returns uint8 RGB
arrays ``[N, S, S, 3]`` with integer labels.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

BLOB_COLORS = np.array([[230, 40, 40], [40, 200, 60], [50, 80, 230], [235, 210, 40],
                        [200, 50, 210], [40, 210, 210], [250, 140, 30], [150, 150, 150]], dtype=np.uint8)

TEXTURES = ("horizontal", "vertical", "diagonal", "checker", "rings", "anti_diagonal")


def blobs(n_per_class: int, num_classes: int = 4, size: int = 32, seed: int = 0) -> tuple:
    """A class-colored square at a random position on a dark noisy background."""
    if num_classes > len(BLOB_COLORS):
        raise ValueError(f"at most {len(BLOB_COLORS)} blob classes")
    rng = np.random.default_rng(seed)
    n = n_per_class * num_classes
    images = rng.integers(0, 40, size=(n, size, size, 3)).astype(np.uint8)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    side = max(2, size // 3)
    for i, y in enumerate(labels):
        r, c = rng.integers(0, size - side + 1, size=2)
        images[i, r:r + side, c:c + side] = BLOB_COLORS[y]
    return images, labels


def texture(kind: str, size: int, freq: float, phase: float, fg, bg) -> np.ndarray:
    """One pattern image mixing a foreground and a background color."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    w = 2 * np.pi * freq
    if kind == "horizontal":
        s = np.sin(w * yy + phase)
    elif kind == "vertical":
        s = np.sin(w * xx + phase)
    elif kind == "diagonal":
        s = np.sin(w * (xx + yy) / np.sqrt(2) + phase)
    elif kind == "anti_diagonal":
        s = np.sin(w * (xx - yy) / np.sqrt(2) + phase)
    elif kind == "checker":
        s = np.sin(w * xx + phase) * np.sin(w * yy + phase)
    elif kind == "rings":
        s = np.sin(w * np.hypot(xx - 0.5, yy - 0.5) * 1.5 + phase)
    else:
        raise ValueError(f"unknown texture {kind!r}")
    m = (s > 0).astype(np.float64)[..., None]
    return m * np.asarray(fg, dtype=np.float64) + (1 - m) * np.asarray(bg, dtype=np.float64)


def textures(n_per_class: int, kinds=TEXTURES[:4], size: int = 32, seed: int = 0,
             noise: float = 40.0, freq_range=(2.0, 5.0), palette_shift: int = 0) -> tuple:
    """Oriented/periodic patterns; the class is the pattern kind, not the color.

    Frequency, phase and both colors are random per image, and Gaussian pixel
    noise of standard deviation ``noise`` is added. ``palette_shift`` moves
    the color distribution, which gives a related-but-different task.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(kinds)), n_per_class)
    images = np.empty((len(labels), size, size, 3), dtype=np.uint8)
    lo, hi = 60 + palette_shift, 200 + palette_shift
    for i, y in enumerate(labels):
        fg = rng.integers(lo + 40, min(hi + 56, 256), size=3)
        bg = rng.integers(max(lo - 60, 0), hi - 40, size=3)
        img = texture(kinds[y], size, rng.uniform(*freq_range), rng.uniform(0, 2 * np.pi), fg, bg)
        img += rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return images, labels


FAMILIES = ("stripes", "grid", "rings", "dots")


def family_pattern(kind: str, size: int, freq: float, angle: float, phase: float, center=(0.5, 0.5)) -> np.ndarray:
    """Boolean mask of one texture family at an arbitrary orientation.

    Unlike :func:`texture`, every family is closed under flips and 90 degree
    rotations, so the label survives the training augmentations.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    u = np.cos(angle) * xx + np.sin(angle) * yy
    v = -np.sin(angle) * xx + np.cos(angle) * yy
    w = 2 * np.pi * freq
    if kind == "stripes":
        return np.sin(w * u + phase) > 0
    if kind == "grid":
        return np.sin(w * u + phase) * np.sin(w * v + phase) > 0
    if kind == "rings":
        return np.sin(1.5 * w * np.hypot(xx - center[0], yy - center[1]) + phase) > 0
    if kind == "dots":
        return np.sin(w * u + phase) + np.sin(w * v + phase) > 1.0
    raise ValueError(f"unknown texture family {kind!r}")


def windowed_textures(n_per_class: int, kinds=FAMILIES, size: int = 32, window: int = 16, seed: int = 0,
                      noise: float = 25.0, distractor: float = 0.4) -> tuple:
    """Class texture inside a random ``window`` square over a faint texture of another family.

    The distractor covers the whole image at ``distractor`` times the
    contrast of the class pattern, so the label is only recoverable from
    the strong pattern, wherever it sits.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(kinds)), n_per_class)
    images = np.empty((len(labels), size, size, 3), dtype=np.uint8)

    def draw(kind, extent, amp, mid, freq_range):
        m = family_pattern(kind, extent, rng.uniform(*freq_range), rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi),
                           rng.uniform(0.3, 0.7, size=2))
        return np.where(m[..., None], mid + amp, mid - amp)

    for i, y in enumerate(labels):
        mid = rng.integers(90, 166, size=3).astype(np.float64)
        amp = rng.uniform(50, 90)
        other = kinds[(y + rng.integers(1, len(kinds))) % len(kinds)]
        img = draw(other, size, distractor * amp, mid, (2.0, 5.0))
        r, c = rng.integers(0, size - window + 1, size=2)
        img[r:r + window, c:c + window] = draw(kinds[y], window, amp, mid, (1.5, 3.0))
        img += rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return images, labels


def task_a(n_per_class: int = 100, size: int = 32, seed: int = 0) -> tuple:
    """Source task: four texture kinds."""
    kinds = ("horizontal", "vertical", "diagonal", "anti_diagonal")
    return textures(n_per_class, kinds, size, seed) + (list(kinds),)


def task_b(n_per_class: int = 60, size: int = 32, seed: int = 1) -> tuple:
    """Related target task: two of the source orientations under a shifted palette."""
    kinds = ("horizontal", "vertical")
    return textures(n_per_class, kinds, size, seed, noise=50.0, palette_shift=-40) + (list(kinds),)


def write_image_folder(images: np.ndarray, labels, classes, root) -> Path:
    """Write ``root/<class>/<i>.png`` and return ``root``."""
    root = Path(root)
    for name in classes:
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, y) in enumerate(zip(images, labels)):
        cv2.imwrite(str(root / classes[int(y)] / f"{i:05d}.png"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    return root
