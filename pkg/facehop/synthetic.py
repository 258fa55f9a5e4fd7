"""
Desk-scale two-class dataset: one smooth intensity template per class plus
per-image smooth and white noise. Images are 32x32 and pre-aligned.
"""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from facehop.dataset import ManifestRow, write_image, write_manifest

logger = logging.getLogger(__name__)

SIZE = 32
CLASSES = ("class_a", "class_b")


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    field = gaussian_filter(rng.normal(size=(size, size)), sigma, mode="reflect")
    return (field - field.mean()) / field.std()


def class_templates(seed: int = 0, size: int = SIZE, sigma: float = 4.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    templates = []
    for _ in CLASSES:
        field = _smooth_field(rng, size, sigma)
        # mirror-symmetric, like frontal faces
        field = field + field[:, ::-1]
        templates.append(128.0 + 35.0 * field / field.std())
    return np.stack(templates)


def make_dataset(
    n: int = 400,
    seed: int = 0,
    minority_fraction: float = 0.5,
    noise: float = 20.0,
    size: int = SIZE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Images ``(n, size, size)`` in [0, 255] and labels; class 1 holds ``minority_fraction`` of them."""
    rng = np.random.default_rng(seed)
    templates = class_templates(seed, size)
    n_b = int(round(n * minority_fraction))
    labels = np.array([0] * (n - n_b) + [1] * n_b, dtype=np.int64)
    rng.shuffle(labels)
    images = np.empty((n, size, size))
    for i, label in enumerate(labels):
        wobble = 12.0 * _smooth_field(rng, size, 3.0)
        images[i] = templates[label] + wobble + rng.normal(0.0, noise, (size, size))
    return np.clip(images, 0.0, 255.0), labels


def write_dataset(directory, n: int = 400, seed: int = 0, minority_fraction: float = 0.5) -> Path:
    """Write PGM images and ``manifest.csv`` (blank landmarks) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images, labels = make_dataset(n, seed, minority_fraction)
    rows = []
    for i, (img, label) in enumerate(zip(images, labels)):
        path = directory / f"img_{i:05d}.pgm"
        write_image(path, img)
        rows.append(ManifestRow(path, CLASSES[label], None, i + 2))
    manifest = directory / "manifest.csv"
    write_manifest(manifest, rows)
    logger.info(f"Wrote {n} synthetic images to {directory}")
    return manifest
