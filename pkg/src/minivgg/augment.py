"""Datasets, synthetic scene generation, and crop-based augmentation.

Training crops follow the multi-scale corner-cropping recipe: crop width and
height are drawn independently from ``scale_set``, the crop is placed at one
of five anchors (four corners or center), resized to ``crop_size`` and
mirrored with probability ``flip_prob``. Testing uses the classic ten views:
four corner crops, the center crop, and their mirrors.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .ppm import read_ppm, write_ppm

ANCHORS = ("top-left", "top-right", "bottom-left", "bottom-right", "center")


@dataclass(frozen=True)
class AugmentConfig:
    base_size: int = 64
    crop_size: int = 56
    scale_set: tuple[int, ...] = (64, 56, 50, 42)
    flip_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "scale_set", tuple(int(s) for s in self.scale_set))
        if not self.scale_set:
            raise ConfigError("scale_set must not be empty")
        if self.crop_size > self.base_size:
            raise ConfigError(f"crop_size {self.crop_size} exceeds base_size {self.base_size}")
        too_big = [s for s in self.scale_set if s > self.base_size or s < 1]
        if too_big:
            raise ConfigError(f"scale_set entries {too_big} outside [1, base_size={self.base_size}]")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")

    @classmethod
    def full_size(cls) -> "AugmentConfig":
        """Full-scale setting: 256 base, 224 crop, scales {256, 224, 198, 168}."""
        return cls(base_size=256, crop_size=224, scale_set=(256, 224, 198, 168))


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (H, W, 3) uint8
    label: int


@dataclass
class Dataset:
    """Labeled images held as one ``(n, H, W, 3)`` uint8 array."""
    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    channel_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label outside the class list")
        if self.channel_mean is None:
            self.channel_mean = compute_mean(self) if len(self) else np.zeros(3, np.float32)
        self.channel_mean = np.asarray(self.channel_mean, dtype=np.float32)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> ImageSample:
        return ImageSample(self.images[i], int(self.labels[i]))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index, channel_mean=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], list(self.class_names),
                       self.channel_mean if channel_mean is None else channel_mean)

    def with_mean(self, channel_mean) -> "Dataset":
        return Dataset(self.images, self.labels, list(self.class_names), channel_mean)


# -- resizing ------------------------------------------------------------------

def _axis_weights(src: int, dst: int):
    # half-pixel centers: source coordinate of output pixel i is (i + 0.5) * src/dst - 0.5
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = (pos - lo).astype(np.float32)
    return lo, hi, frac


def bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an ``(H, W, C)`` array to float32 ``(out_h, out_w, C)``."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    if h == out_h and w == out_w:
        return img.copy()
    lo, hi, fy = _axis_weights(h, out_h)
    # a + f*(b - a) reproduces constant regions exactly
    top = img[lo]
    rows = top + fy[:, None, None] * (img[hi] - top)
    lo, hi, fx = _axis_weights(w, out_w)
    left = rows[:, lo]
    return left + fx[None, :, None] * (rows[:, hi] - left)


def resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Resize raw RGB to ``target x target`` uint8, rounding half up."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise DataError(f"cannot resize empty image of shape {image.shape}")
    if image.shape[:2] == (target, target):
        return image.astype(np.uint8, copy=True)
    out = bilinear(image, target, target)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


# -- crops -----------------------------------------------------------------------

def anchor_offset(anchor: int, base: int, h: int, w: int) -> tuple[int, int]:
    """``(top, left)`` of an ``h x w`` crop at one of the five anchors."""
    return [(0, 0), (0, base - w), (base - h, 0), (base - h, base - w),
            ((base - h) // 2, (base - w) // 2)][anchor]


def _to_tensor(pixels: np.ndarray, mean) -> np.ndarray:
    out = np.asarray(pixels, dtype=np.float32) - np.asarray(mean, dtype=np.float32)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def draw_crop_params(cfg: AugmentConfig, rng: np.random.Generator) -> tuple[int, int, int, bool]:
    """Sample ``(w, h, anchor, flip)``; the rng is consumed in that order."""
    w = cfg.scale_set[rng.integers(len(cfg.scale_set))]
    h = cfg.scale_set[rng.integers(len(cfg.scale_set))]
    anchor = int(rng.integers(len(ANCHORS)))
    flip = bool(rng.random() < cfg.flip_prob)
    return int(w), int(h), anchor, flip


def apply_crop(pixels: np.ndarray, cfg: AugmentConfig, w: int, h: int, anchor: int, flip: bool,
               mean=(0.0, 0.0, 0.0)) -> np.ndarray:
    base = pixels.shape[0]
    if pixels.shape[:2] != (cfg.base_size, cfg.base_size):
        raise DataError(f"image is {pixels.shape[:2]}, expected {cfg.base_size}x{cfg.base_size}")
    if w > base or h > base:
        raise ConfigError(f"crop {w}x{h} larger than image {base}x{base}")
    top, left = anchor_offset(anchor, base, h, w)
    crop = bilinear(pixels[top:top + h, left:left + w], cfg.crop_size, cfg.crop_size)
    if flip:
        crop = crop[:, ::-1]
    return _to_tensor(crop, mean)


def sample_train_crop(image, cfg: AugmentConfig, rng: np.random.Generator, mean=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Random multi-scale corner crop of a canonical image as a ``(3, crop, crop)`` tensor."""
    pixels = image.pixels if isinstance(image, ImageSample) else image
    return apply_crop(pixels, cfg, *draw_crop_params(cfg, rng), mean=mean)


def view_offsets(cfg: AugmentConfig) -> list[tuple[int, int]]:
    m = cfg.base_size - cfg.crop_size
    if m < 0:
        raise ConfigError(f"crop_size {cfg.crop_size} exceeds base_size {cfg.base_size}")
    return [(0, 0), (0, m), (m, 0), (m, m), (m // 2, m // 2)]


def ten_views(image, cfg: AugmentConfig, mean=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """Four corner crops and the center crop, then the same five mirrored."""
    pixels = image.pixels if isinstance(image, ImageSample) else image
    c = cfg.crop_size
    views = [_to_tensor(pixels[t:t + c, l:l + c], mean) for t, l in view_offsets(cfg)]
    return views + [np.ascontiguousarray(v[:, :, ::-1]) for v in views]


def center_view(image, cfg: AugmentConfig, mean=(0.0, 0.0, 0.0)) -> np.ndarray:
    pixels = image.pixels if isinstance(image, ImageSample) else image
    t, l = view_offsets(cfg)[4]
    c = cfg.crop_size
    return _to_tensor(pixels[t:t + c, l:l + c], mean)


def sample_rng(seed: int, index: int, iteration: int) -> np.random.Generator:
    """Generator for the augmentation of sample ``index`` at ``iteration``.

    Derived only from ``(seed, index, iteration)`` so results do not depend on
    batch composition or worker count.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, iteration])))


# -- statistics --------------------------------------------------------------------

def compute_mean(dataset: Dataset) -> np.ndarray:
    if len(dataset) == 0:
        raise DataError("cannot compute the mean of an empty dataset")
    return dataset.images.reshape(-1, 3).mean(axis=0, dtype=np.float64).astype(np.float32)


# -- synthetic scenes --------------------------------------------------------------

# Every motif class is closed under horizontal mirroring, so flip augmentation
# never turns one class into another.
MOTIFS = ("horizontal", "vertical", "diagonal", "split", "checker", "disk", "ring", "dots")


def _grating(yy, xx, angle, period, phase):
    t = xx * math.cos(angle) + yy * math.sin(angle)
    return 0.5 + 0.5 * np.sin(2 * math.pi * t / period + phase)


def _draw_motif(kind: str, size: int, band: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    period = size / rng.uniform(3.0, 5.0) / (1 + 0.5 * band)
    jitter = math.radians(rng.uniform(-10, 10))
    phase = rng.uniform(0, 2 * math.pi)
    if kind in ("horizontal", "vertical", "diagonal"):
        angle = {"horizontal": 90, "vertical": 0, "diagonal": 45 + 90 * int(rng.integers(2))}[kind]
        return _grating(yy, xx, math.radians(angle) + jitter, period, phase)
    if kind == "split":
        # two color fields separated by a straight edge near the center
        angle = rng.uniform(0, 2 * math.pi)
        cy, cx = rng.uniform(0.35, 0.65, 2) * size
        t = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
        return np.clip(t + 0.5, 0, 1)
    if kind == "checker":
        a = _grating(yy, xx, jitter, period, phase) - 0.5
        b = _grating(yy, xx, jitter + math.pi / 2, period, rng.uniform(0, 2 * math.pi)) - 0.5
        return np.clip(0.5 + 8 * a * b, 0, 1)
    scale = size / (1 + 0.5 * band)

    def disk(cy, cx, r):
        d = np.hypot(yy - cy, xx - cx)
        return np.clip(r - d + 0.5, 0, 1)

    if kind == "disk":
        r = rng.uniform(0.15, 0.28) * scale
        cy, cx = rng.uniform(r, size - r, 2)
        return disk(cy, cx, r)
    if kind == "ring":
        r = rng.uniform(0.2, 0.3) * scale
        cy, cx = rng.uniform(r, size - r, 2)
        return np.clip(disk(cy, cx, r) - disk(cy, cx, r * 0.6), 0, 1)
    # dots
    m = np.zeros((size, size))
    r = 0.06 * scale
    for _ in range(int(rng.integers(5, 10))):
        cy, cx = rng.uniform(r, size - r, 2)
        m = np.maximum(m, disk(cy, cx, r))
    return m


def _colors(rng: np.random.Generator):
    while True:
        fg, bg = rng.uniform(0, 255, 3), rng.uniform(0, 255, 3)
        if np.abs(fg - bg).sum() > 150:
            return fg, bg


def synthetic_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    kind = MOTIFS[label % len(MOTIFS)]
    mask = _draw_motif(kind, size, label // len(MOTIFS), rng)
    fg, bg = _colors(rng)
    img = bg + (fg - bg) * mask[..., None] + rng.normal(0, 10, (size, size, 3))
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def generate_synthetic(num_classes: int, per_class: int, size: int, seed: int) -> Dataset:
    """Procedural scene dataset, ``per_class`` images for each of ``num_classes`` motifs.

    Class ``c`` draws motif ``MOTIFS[c % 8]`` (gratings of three orientations,
    a two-field color split, a checkerboard, a disk, a ring, scattered dots);
    classes beyond the eighth reuse the motifs at a finer spatial band. Foreground/background colors,
    phase, position, orientation jitter and pixel noise are random per
    image, so channel statistics carry almost no class information.
    Image ``j`` of class ``c`` depends only on ``(seed, c, j)``; samples are
    ordered class by class.
    """
    if num_classes < 2 or per_class < 1:
        raise ConfigError("need at least 2 classes and 1 image per class")
    images = np.empty((num_classes * per_class, size, size, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(num_classes), per_class)
    for c in range(num_classes):
        for j in range(per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, c, j])))
            images[c * per_class + j] = synthetic_image(c, size, rng)
    width = max(2, len(str(num_classes - 1)))
    names = [f"class_{c:0{width}d}" for c in range(num_classes)]
    return Dataset(images, labels, names)


def split_per_class(dataset: Dataset, first: int) -> tuple[Dataset, Dataset]:
    """Split into the first ``first`` images of every class and the rest.

    The second part inherits the first part's channel mean.
    """
    idx_a, idx_b = [], []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        idx_a += list(members[:first])
        idx_b += list(members[first:])
    a = dataset.subset(idx_a, channel_mean=None)
    a = a.with_mean(compute_mean(a))
    return a, dataset.subset(idx_b, channel_mean=a.channel_mean)


# -- directory trees -------------------------------------------------------------

def load_dataset(root, base_size: int = 64) -> Dataset:
    """Load ``root/<class>/<image>.ppm``; classes and files in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    images, labels = [], []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".ppm")
        if not files:
            warnings.warn(f"class directory {d} contains no PPM images", stacklevel=2)
        for f in files:
            images.append(resize_bilinear(read_ppm(f), base_size))
            labels.append(label)
    if not images:
        raise DataError(f"no images found under {root}")
    return Dataset(np.stack(images), np.array(labels), [d.name for d in class_dirs])


def save_dataset(dataset: Dataset, root) -> None:
    """Write ``dataset`` as a PPM tree readable by :func:`load_dataset`."""
    root = Path(root)
    counters = [0] * dataset.num_classes
    for name in dataset.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for img, label in zip(dataset.images, dataset.labels):
        write_ppm(root / dataset.class_names[label] / f"{counters[label]:06d}.ppm", img)
        counters[label] += 1
