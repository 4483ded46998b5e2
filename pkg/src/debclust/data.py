"""Datasets: long-tailed class profiles, Gaussian blobs, CIFAR-10 binaries, augmentation."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from . import container

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
STD_EPS = 1e-8


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_image(self) -> bool:
        return self.samples.ndim == 4

    def subset(self, idx) -> "Dataset":
        return Dataset(self.samples[idx], self.labels[idx], self.class_count, self.channel_mean, self.channel_std)

    def unstandardize(self, x: np.ndarray) -> np.ndarray:
        if self.channel_mean is None:
            return x
        return x * (self.channel_std + STD_EPS)[:, None, None] + self.channel_mean[:, None, None]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        if self.channel_mean is None:
            return x
        return (x - self.channel_mean[:, None, None]) / (self.channel_std + STD_EPS)[:, None, None]


# long-tailed profiles --------------------------------------------------------

@dataclass(frozen=True)
class LongTailSpec:
    class_count: int = 10
    max_per_class: int = 5000
    imbalance_ratio: float = 100.0

    def __post_init__(self):
        if self.class_count < 2 or self.max_per_class < 1 or self.imbalance_ratio < 1:
            raise ValueError(f"invalid long-tail spec {self}")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def long_tail_counts(spec: LongTailSpec) -> list[int]:
    """Exponentially decaying per-class counts from ``max_per_class`` down by ``imbalance_ratio``."""
    c = spec.class_count
    return [max(1, round_half_away(spec.max_per_class * spec.imbalance_ratio ** (-i / (c - 1))))
            for i in range(c)]


# synthetic blobs -------------------------------------------------------------

def blob_means(class_count: int, dim: int, separation: float) -> np.ndarray:
    """Class ``c`` sits at ``separation * (1 + c // dim)`` along axis ``c % dim``."""
    means = np.zeros((class_count, dim))
    for c in range(class_count):
        means[c, c % dim] = separation * (1 + c // dim)
    return means


def gen_blobs(means, sigma: float, counts: Sequence[int], seed: int = 0) -> Dataset:
    means = np.asarray(means, dtype=np.float64)
    if len(counts) != len(means):
        raise ValueError(f"{len(counts)} counts for {len(means)} classes")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, n in enumerate(counts):
        xs.append(means[c] + sigma * rng.standard_normal((int(n), means.shape[1])))
        ys.append(np.full(int(n), c))
    return Dataset(np.concatenate(xs), np.concatenate(ys), len(means))


# CIFAR-10 ------------------------------------------------------------------------

class FormatError(ValueError):
    pass


def parse_cifar10(data: bytes) -> Dataset:
    """Decode a CIFAR-10 binary batch into standardised ``N x 3 x 32 x 32`` images."""
    n, rem = divmod(len(data), CIFAR_RECORD)
    if rem:
        raise FormatError(f"truncated record at offset {n * CIFAR_RECORD}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label byte {labels[bad[0]]} > 9 at offset {bad[0] * CIFAR_RECORD}")
    pixels = raw[:, 1:].reshape(n, *CIFAR_SHAPE).astype(np.float64) / 255.0
    mean = pixels.mean(axis=(0, 2, 3)) if n else np.zeros(3)
    std = pixels.std(axis=(0, 2, 3)) if n else np.ones(3)
    samples = (pixels - mean[:, None, None]) / (std + STD_EPS)[:, None, None]
    return Dataset(samples, labels, 10, mean, std)


def serialize_cifar10(ds: Dataset) -> bytes:
    """Inverse of :func:`parse_cifar10`."""
    pixels = np.rint(ds.unstandardize(ds.samples) * 255.0)
    out = np.empty((len(ds), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = ds.labels
    out[:, 1:] = np.clip(pixels, 0, 255).reshape(len(ds), -1)
    return out.tobytes()


def read_cifar10(paths: Sequence[str | os.PathLike], limit: int | None = None) -> Dataset:
    data = b"".join(Path(p).read_bytes() for p in paths)
    if limit is not None:
        data = data[: limit * CIFAR_RECORD]
    return parse_cifar10(data)


# dataset files --------------------------------------------------------------------

def save_dataset(ds: Dataset, stem: str | os.PathLike) -> None:
    """Write ``<stem>.bin`` (tensor container) and ``<stem>_labels.csv``."""
    stem = Path(stem)
    tensors = {"samples": ds.samples, "class_count": np.array(float(ds.class_count))}
    if ds.channel_mean is not None:
        tensors["channel_mean"] = ds.channel_mean
        tensors["channel_std"] = ds.channel_std
    container.save(stem.with_suffix(".bin"), tensors)
    with open(f"{stem}_labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        w.writerows(enumerate(ds.labels.tolist()))


def load_dataset(stem: str | os.PathLike) -> Dataset:
    stem = Path(stem)
    tensors = container.load(stem.with_suffix(".bin"))
    with open(f"{stem}_labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    return Dataset(tensors["samples"], labels, int(tensors["class_count"]),
                   tensors.get("channel_mean"), tensors.get("channel_std"))


# augmentation ---------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.08, 1.0)
    crop_aspect: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    grayscale_p: float = 0.2
    jitter_p: float = 0.8
    jitter_strengths: tuple[float, float, float, float] = (0.4, 0.4, 0.4, 0.1)
    blur_p: float = 0.5
    blur_kernel_frac: float = 0.10
    blur_sigma: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self):
        for name in ("crop_scale", "crop_aspect", "jitter_strengths", "blur_sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("flip_p", "grayscale_p", "jitter_p", "blur_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        for name in ("crop_scale", "crop_aspect", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is not ordered")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a ``C x H x W`` image."""
    _, h, w = img.shape

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(out_h, h)
    x0, x1, fx = coords(out_w, w)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def _crop_window(rng, h, w, cfg: AugmentConfig):
    area = h * w
    log_lo, log_hi = math.log(cfg.crop_aspect[0]), math.log(cfg.crop_aspect[1])
    for _ in range(10):
        target = area * rng.uniform(*cfg.crop_scale)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = round_half_away(math.sqrt(target * ratio))
        ch = round_half_away(math.sqrt(target / ratio))
        if 0 < cw <= w and 0 < ch <= h:
            return int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1)), ch, cw
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side, side


def _gray(img):
    if img.shape[0] == 1:
        return img[0]
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _jitter(img, rng, strengths):
    b, c, s, hue = strengths
    factors = (rng.uniform(max(0, 1 - b), 1 + b), rng.uniform(max(0, 1 - c), 1 + c),
               rng.uniform(max(0, 1 - s), 1 + s), rng.uniform(-hue, hue))
    img = np.clip(img * factors[0], 0, 1)
    m = _gray(img).mean()
    img = np.clip((img - m) * factors[1] + m, 0, 1)
    if img.shape[0] == 3:
        g = _gray(img)[None]
        img = np.clip((img - g) * factors[2] + g, 0, 1)
        hsv = rgb_to_hsv(np.moveaxis(img, 0, -1))
        hsv[..., 0] = (hsv[..., 0] + factors[3]) % 1.0
        img = np.moveaxis(hsv_to_rgb(hsv), -1, 0)
    return img


def gaussian_blur(img: np.ndarray, kernel: int, sigma: float) -> np.ndarray:
    r = kernel // 2
    xs = np.arange(-r, r + 1)
    k = np.exp(-(xs**2) / (2 * sigma * sigma))
    k /= k.sum()
    pad = np.pad(img, ((0, 0), (r, r), (r, r)), mode="reflect")
    h, w = img.shape[1:]
    rows = sum(k[i] * pad[:, i:i + h, :] for i in range(kernel))
    return sum(k[i] * rows[:, :, i:i + w] for i in range(kernel))


def augment_image(img, cfg: AugmentConfig, seed) -> np.ndarray:
    """One random view of a ``C x H x W`` image with values in [0, 1].

    Steps in order: resized crop, horizontal flip, colour jitter
    (brightness, contrast, saturation, hue), grayscale, Gaussian blur.
    Every random draw comes from ``seed``.
    """
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    if h < 4 or w < 4:
        raise ValueError(f"image must be at least 4x4, got {h}x{w}")
    rng = np.random.default_rng(seed)
    top, left, ch, cw = _crop_window(rng, h, w, cfg)
    out = resize_bilinear(img[:, top:top + ch, left:left + cw], h, w)
    if rng.random() < cfg.flip_p:
        out = out[:, :, ::-1]
    if rng.random() < cfg.jitter_p:
        out = _jitter(out, rng, cfg.jitter_strengths)
    if rng.random() < cfg.grayscale_p:
        out = np.repeat(_gray(out)[None], c, axis=0)
    if rng.random() < cfg.blur_p:
        kernel = round_half_away(cfg.blur_kernel_frac * min(h, w))
        if kernel % 2 == 0:
            kernel += 1
        sigma = rng.uniform(*cfg.blur_sigma)
        if kernel > 1:
            out = gaussian_blur(out, kernel, sigma)
    return np.ascontiguousarray(out)


def augment_vector(v, noise_sigma: float, drop_p: float, seed) -> np.ndarray:
    """Additive Gaussian noise, then each coordinate zeroed with probability ``drop_p``."""
    v = np.asarray(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = v + noise_sigma * rng.standard_normal(v.shape)
    keep = rng.random(v.shape) >= drop_p
    return np.where(keep, out, 0.0)
