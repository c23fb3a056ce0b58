"""Image-folder datasets: indexing, stratified splits, augmentation, batching.

Layout on disk is ``root/<class_name>/<image>.{jpg,jpeg,png}``. Class indices
follow the lexicographic order of the folder names.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import cv2
import numpy as np

from .errors import DataError, DatasetNotFoundError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
SPLITS = ("train", "val", "test")


@dataclass
class Record:
    path: str
    class_name: str
    class_index: int
    split: Optional[str] = None


@dataclass
class DatasetIndex:
    records: list
    classes: list
    skipped: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def subset(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict:
        out = {}
        for r in self.records:
            out.setdefault(r.class_name, {s: 0 for s in SPLITS})
            if r.split:
                out[r.class_name][r.split] += 1
        return out

    def write_manifest(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "class", "split"])
            for r in self.records:
                w.writerow([r.path, r.class_name, r.split or ""])

    def write_skipped(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "reason"])
            for p in self.skipped:
                w.writerow([p, "IMAGE_UNDECODABLE"])


def decode_image(path) -> Optional[np.ndarray]:
    """Decode to an 8-bit RGB array, or ``None`` if the file is unreadable."""
    try:
        raw = np.fromfile(str(path), dtype=np.uint8)
    except OSError:
        return None
    img = cv2.imdecode(raw, cv2.IMREAD_COLOR) if raw.size else None
    if img is None:
        return None
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def resize(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[:2] == (size, size):
        return image
    return cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)


def index_dataset(root, verify: bool = True, workers: int = 1) -> DatasetIndex:
    """Scan a class-per-folder tree. Undecodable files are reported in ``skipped``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetNotFoundError(f"dataset root {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"dataset root {root} has no class folders")
    if len(class_dirs) < 2:
        raise DataError(f"need at least 2 classes, found {len(class_dirs)} in {root}")

    candidates = []
    for ci, d in enumerate(class_dirs):
        for f in sorted(d.iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS:
                candidates.append((str(f), d.name, ci))
    if verify:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            ok = list(pool.map(lambda c: decode_image(c[0]) is not None, candidates))
    else:
        ok = [True] * len(candidates)
    records = [Record(*c) for c, good in zip(candidates, ok) if good]
    skipped = [c[0] for c, good in zip(candidates, ok) if not good]
    for path in skipped:
        log.warning("skipping undecodable image %s", path)
    present = {r.class_index for r in records}
    for ci, d in enumerate(class_dirs):
        if ci not in present:
            raise DataError(f"class {d.name!r} has no decodable images")
    return DatasetIndex(records, [d.name for d in class_dirs], skipped)


def split_counts(n: int) -> tuple:
    """Per-class ``(train, val, test)`` sizes: floor 70% and 15%, test takes the rest."""
    n_train = n * 70 // 100
    n_val = n * 15 // 100
    return n_train, n_val, n - n_train - n_val


def split(index: DatasetIndex, seed: int = 0) -> DatasetIndex:
    """Stratified 70/15/15 assignment; each class is shuffled by its own seeded stream."""
    by_class: dict[int, list] = {}
    for r in index.records:
        by_class.setdefault(r.class_index, []).append(r)
    tagged = []
    for ci in sorted(by_class):
        group = sorted(by_class[ci], key=lambda r: r.path)
        if len(group) < 3:
            raise DataError(f"class {index.classes[ci]!r} has {len(group)} images; need at least 3")
        order = np.random.default_rng([seed, ci]).permutation(len(group))
        n_train, n_val, _ = split_counts(len(group))
        for rank, pos in enumerate(order):
            tag = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            tagged.append(replace(group[pos], split=tag))
    tagged.sort(key=lambda r: (r.class_index, r.path))
    return DatasetIndex(tagged, list(index.classes), list(index.skipped))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Probabilities (applied in this order) and magnitude limits of the train-time transforms."""

    hflip: float = 0.5
    rot90: float = 0.5
    shift_scale_rotate: float = 0.5
    gamma: float = 0.2
    brightness_contrast: float = 0.3
    rgb_shift: float = 0.3
    clahe: float = 0.3
    shift_limit: float = 0.05
    scale_limit: float = 0.05
    rotate_limit: float = 30.0
    gamma_range: tuple = (0.8, 1.2)
    brightness_limit: float = 0.2
    contrast_limit: float = 0.2
    rgb_shift_limit: int = 15
    clahe_clip: float = 4.0
    clahe_tiles: int = 8

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(hflip=0, rot90=0, shift_scale_rotate=0, gamma=0, brightness_contrast=0, rgb_shift=0, clahe=0)


def hflip(img):
    return img[:, ::-1].copy()


def rot90(img, k):
    return np.ascontiguousarray(np.rot90(img, k))


def shift_scale_rotate(img, dx, dy, scale, angle):
    """Affine warp with bilinear sampling and reflected borders; shifts are fractions of the size."""
    h, w = img.shape[:2]
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    m[0, 2] += dx * w
    m[1, 2] += dy * h
    return cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)


def gamma(img, g):
    lut = np.clip(255.0 * (np.arange(256) / 255.0) ** g + 0.5, 0, 255).astype(np.uint8)
    return lut[img]


def brightness_contrast(img, alpha, beta):
    """``alpha * img + beta * 255`` clipped to 8 bits."""
    out = img.astype(np.float32) * alpha + beta * 255.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def rgb_shift(img, shifts):
    out = img.astype(np.int16) + np.asarray(shifts, dtype=np.int16)
    return np.clip(out, 0, 255).astype(np.uint8)


def clahe(img, clip=4.0, tiles=8):
    """Contrast-limited adaptive equalization of the luma channel only."""
    ycc = cv2.cvtColor(img, cv2.COLOR_RGB2YCrCb)
    eq = cv2.createCLAHE(clipLimit=clip, tileGridSize=(tiles, tiles))
    ycc[:, :, 0] = eq.apply(np.ascontiguousarray(ycc[:, :, 0]))
    return cv2.cvtColor(ycc, cv2.COLOR_YCrCb2RGB)


def augment(image: np.ndarray, rng: np.random.Generator, cfg: Optional[AugmentConfig] = None) -> np.ndarray:
    """Apply each transform independently with its probability; returns a new uint8 image."""
    cfg = cfg or AugmentConfig()
    img = image
    if rng.random() < cfg.hflip:
        img = hflip(img)
    if rng.random() < cfg.rot90:
        img = rot90(img, int(rng.integers(1, 4)))
    if rng.random() < cfg.shift_scale_rotate:
        dx, dy = rng.uniform(-cfg.shift_limit, cfg.shift_limit, size=2)
        scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit)
        angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit)
        img = shift_scale_rotate(img, dx, dy, scale, angle)
    if rng.random() < cfg.gamma:
        img = gamma(img, rng.uniform(*cfg.gamma_range))
    if rng.random() < cfg.brightness_contrast:
        alpha = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
        beta = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit)
        img = brightness_contrast(img, alpha, beta)
    if rng.random() < cfg.rgb_shift:
        lim = cfg.rgb_shift_limit
        img = rgb_shift(img, rng.integers(-lim, lim + 1, size=3))
    if rng.random() < cfg.clahe:
        img = clahe(img, cfg.clahe_clip, cfg.clahe_tiles)
    return img if img is not image else image.copy()


# ---------------------------------------------------------------------------
# normalization and batching
# ---------------------------------------------------------------------------

def normalize(image: np.ndarray) -> np.ndarray:
    """uint8 ``[H, W, 3]`` -> float32 ``[3, H, W]`` with ImageNet mean/std."""
    x = image.astype(np.float32) / 255.0
    return ((x - MEAN) / STD).transpose(2, 0, 1)


def denormalize(x: np.ndarray) -> np.ndarray:
    img = x.transpose(1, 2, 0) * STD + MEAN
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


@dataclass
class ImageBatch:
    pixels: np.ndarray
    labels: np.ndarray
    paths: list


class FileLoader:
    """Decode + resize images from disk, optionally caching the resized arrays."""

    def __init__(self, size: int, cache: bool = True):
        self.size = size
        self._cache = {} if cache else None

    def __call__(self, record: Record) -> np.ndarray:
        if self._cache is not None and record.path in self._cache:
            return self._cache[record.path]
        img = decode_image(record.path)
        if img is None:
            raise DataError(f"cannot decode image {record.path}")
        img = resize(img, self.size)
        if self._cache is not None:
            self._cache[record.path] = img
        return img


class ArrayLoader:
    """Serve in-memory uint8 images keyed by record path."""

    def __init__(self, images: dict):
        self.images = images

    def __call__(self, record: Record) -> np.ndarray:
        return self.images[record.path]


def in_memory_index(images: np.ndarray, labels: Sequence[int], classes: Sequence[str], seed: int = 0,
                    prefix: str = "mem") -> tuple:
    """Build a split index plus loader for arrays of uint8 images ``[N, H, W, 3]``."""
    records = [Record(f"{prefix}://{i:06d}", classes[int(y)], int(y)) for i, y in enumerate(labels)]
    index = split(DatasetIndex(records, list(classes)), seed)
    loader = ArrayLoader({r.path: images[i] for i, r in enumerate(records)})
    return index, loader


def epoch_order(records: list, split_name: str, seed: int, epoch: int) -> list:
    if split_name != "train":
        return list(records)
    perm = np.random.default_rng([seed, epoch]).permutation(len(records))
    return [records[i] for i in perm]


def batches(index: DatasetIndex, split_name: str, loader: Callable, batch_size: int = 64,
            shuffle_seed: int = 0, epoch: int = 0, augment_cfg: Optional[AugmentConfig] = None,
            workers: int = 1) -> Iterator[ImageBatch]:
    """Yield normalized batches of one split.

    Train order is a permutation drawn from ``(shuffle_seed, epoch)``; val and
    test keep index order. Augmentation (train only) draws from a generator
    keyed by ``(shuffle_seed, epoch, position)``, so output does not depend
    on ``workers``. The last partial batch is kept.
    """
    records = index.subset(split_name)
    if not records:
        raise DataError(f"split {split_name!r} is empty")
    order = epoch_order(records, split_name, shuffle_seed, epoch)
    do_aug = split_name == "train" and augment_cfg is not None

    def prepare(item):
        pos, rec = item
        img = loader(rec)
        if do_aug:
            img = augment(img, np.random.default_rng([shuffle_seed, epoch, pos]), augment_cfg)
        return normalize(img)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for start in range(0, len(order), batch_size):
            chunk = list(enumerate(order[start:start + batch_size], start))
            arrays = list(pool.map(prepare, chunk)) if pool else [prepare(c) for c in chunk]
            yield ImageBatch(np.stack(arrays),
                             np.array([r.class_index for _, r in chunk], dtype=np.int64),
                             [r.path for _, r in chunk])
    finally:
        if pool:
            pool.shutdown()
