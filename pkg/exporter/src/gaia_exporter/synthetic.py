"""Synthetic 4-class image task plus OOD shifts for desk-scale fixtures.

In-distribution classes are localized bright shapes on a dark background
(horizontal bar, vertical bar, disk, ring): trained features activate over
the shape and stay silent over the background, giving the spatially
coherent activation sparsity the abnormality scorers feed on. OOD sets are
full-field uniform pixel noise and a high-frequency diagonal texture, both
of which light features up everywhere.
"""

from __future__ import annotations

import numpy as np

CLASS_NAMES = ("h_bar", "v_bar", "disk", "ring")
NUM_CLASSES = 4
BACKGROUND = 0.12


def _color_gain(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.6, 1.0, size=(3, 1, 1))


def _shape_mask(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=np.float64)
    if label == 0:
        t = int(rng.integers(3, 6))
        y0 = int(rng.integers(2, size - t - 2))
        x0 = int(rng.integers(0, size // 3))
        x1 = int(rng.integers(2 * size // 3, size))
        mask[y0 : y0 + t, x0:x1] = 1.0
    elif label == 1:
        t = int(rng.integers(3, 6))
        x0 = int(rng.integers(2, size - t - 2))
        y0 = int(rng.integers(0, size // 3))
        y1 = int(rng.integers(2 * size // 3, size))
        mask[y0:y1, x0 : x0 + t] = 1.0
    elif label == 2:
        r = rng.uniform(3.0, 5.0)
        cy = rng.uniform(r + 1, size - r - 1)
        cx = rng.uniform(r + 1, size - r - 1)
        mask[(y - cy) ** 2 + (x - cx) ** 2 <= r**2] = 1.0
    else:
        r = rng.uniform(4.0, 6.0)
        w = rng.uniform(1.5, 2.5)
        cy = rng.uniform(r + 1, size - r - 1)
        cx = rng.uniform(r + 1, size - r - 1)
        d2 = (y - cy) ** 2 + (x - cx) ** 2
        mask[(d2 <= r**2) & (d2 >= (r - w) ** 2)] = 1.0
    return mask


def make_id_samples(rng: np.random.Generator, count: int, size: int,
                    noise: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """(images in [0,1] NCHW float32, labels int32)."""
    images = np.empty((count, 3, size, size), dtype=np.float32)
    labels = (np.arange(count) % NUM_CLASSES).astype(np.int32)
    rng.shuffle(labels)
    for i in range(count):
        mask = _shape_mask(rng, int(labels[i]), size)
        intensity = rng.uniform(0.75, 1.0)
        img = BACKGROUND + (intensity - BACKGROUND) * mask[None, :, :] * _color_gain(rng)
        img = img + rng.normal(0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return images, labels


def make_uniform_noise(rng: np.random.Generator, count: int, size: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(count, 3, size, size)).astype(np.float32)


def _novel_shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Familiar parts in configurations outside the training label space.

    L-corners, T-junctions, double bars, and bar+disk pairs keep the local
    edge statistics and total bright area of the training shapes, so the
    shift is visible only to features that encode global shape structure.
    """
    y, x = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=np.float64)
    if rng.random() < 0.5:  # T-junction
        t = int(rng.integers(3, 5))
        arm = int(rng.integers(9, 13))
        y0 = int(rng.integers(2, size - arm - 2))
        x0 = int(rng.integers(2 + arm // 2, size - arm // 2 - 2))
        mask[y0 : y0 + t, x0 - arm // 2 : x0 + arm // 2] = 1.0
        mask[y0 : y0 + arm, x0 - t // 2 : x0 + t - t // 2] = 1.0
    else:  # bar + disk pair
        t = int(rng.integers(2, 4))
        arm = int(rng.integers(7, 10))
        y0 = int(rng.integers(2, size // 2 - t))
        x0 = int(rng.integers(2, size - arm - 2))
        mask[y0 : y0 + t, x0 : x0 + arm] = 1.0
        r = rng.uniform(2.5, 3.5)
        cy = rng.uniform(size // 2 + r + 1, size - r - 1)
        cx = rng.uniform(r + 1, size - r - 1)
        mask[(y - cy) ** 2 + (x - cx) ** 2 <= r**2] = 1.0
    return mask


def make_texture_shift(rng: np.random.Generator, count: int, size: int,
                       noise: float = 0.05) -> np.ndarray:
    """Structure-shifted synthetic: novel geometry, matched low-level palette.

    Background, fill intensity, and color conventions match the training
    distribution, so shallow features see familiar statistics and only the
    deeper shape structure is off, mirroring a semantic OOD shift.
    """
    images = np.empty((count, 3, size, size), dtype=np.float32)
    for i in range(count):
        mask = _novel_shape_mask(rng, size)
        intensity = rng.uniform(0.75, 1.0)
        img = BACKGROUND + (intensity - BACKGROUND) * mask[None, :, :] * _color_gain(rng)
        img = img + rng.normal(0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return images


def normalization_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over a training set."""
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(np.float32), np.maximum(std.astype(np.float32), 1e-4)


def normalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((images - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)
