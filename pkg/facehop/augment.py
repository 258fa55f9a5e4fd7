"""
Minority-class rebalancing by horizontal flips and nearest-neighbour averaging.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.decomposition import PCA

from facehop.errors import ValidationError
from facehop.pca import fix_signs, project

logger = logging.getLogger(__name__)

TARGET_RATIO = 0.9
SUBSPACE_ENERGY = 0.9
FLIP = "flip"
NN_AVERAGE = "nn_average"


@dataclass(frozen=True)
class Provenance:
    method: str
    sources: Tuple[int, ...]

    def __str__(self) -> str:
        return f"{self.method}:{'+'.join(str(s) for s in self.sources)}"

    @classmethod
    def parse(cls, text: str) -> "Provenance":
        method, _, sources = text.partition(":")
        if method not in (FLIP, NN_AVERAGE) or not sources:
            raise ValidationError(f"Unrecognised provenance '{text}'")
        try:
            return cls(method, tuple(int(s) for s in sources.split("+")))
        except ValueError as e:
            raise ValidationError(f"Unrecognised provenance '{text}'") from e


@dataclass
class AugmentedSet:
    """Originals first, synthesized images after them."""

    images: np.ndarray
    labels: np.ndarray
    provenance: List[Optional[Provenance]] = field(default_factory=list)

    @property
    def n_original(self) -> int:
        return sum(p is None for p in self.provenance)

    @property
    def synthesized(self) -> np.ndarray:
        return self.images[self.n_original :]


def flip_h(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64)[..., ::-1].copy()


def pca_energy_subspace(X, energy: float = SUBSPACE_ENERGY) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and leading components of ``X`` holding ``energy`` of its variance."""
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1)
    mean = X.mean(axis=0)
    if not np.any(X != X[0]):
        return mean, np.eye(1, X.shape[1])
    pca = PCA(n_components=energy, svd_solver="full").fit(X)
    return mean, fix_signs(pca.components_)


def nearest_neighbors(minority) -> np.ndarray:
    """Index of each image's Euclidean nearest neighbour (itself excluded) in the reduced space."""
    images = np.asarray(minority, dtype=np.float64)
    if len(images) < 2:
        raise ValidationError(f"Nearest-neighbour averaging needs 2 images, got {len(images)}")
    flat = images.reshape(len(images), -1)
    mean, components = pca_energy_subspace(flat)
    coords = project(flat, components, mean)
    distances = cdist(coords, coords)
    np.fill_diagonal(distances, np.inf)
    return np.argmin(distances, axis=1)


def neighbor_pairs(minority) -> List[Tuple[int, int]]:
    """Nearest-neighbour pairs with (i, j) and (j, i) kept once, in first-seen order."""
    pairs: List[Tuple[int, int]] = []
    seen = set()
    for i, j in enumerate(nearest_neighbors(minority)):
        pair = (min(i, int(j)), max(i, int(j)))
        if pair not in seen:
            seen.add(pair)
            pairs.append(pair)
    return pairs


def nn_average(minority, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
    images = np.asarray(minority, dtype=np.float64)
    pairs = neighbor_pairs(images) if pairs is None else pairs
    if not pairs:
        return np.zeros((0,) + images.shape[1:])
    left, right = np.array(pairs).T
    return np.clip((images[left] + images[right]) / 2.0, 0.0, 255.0)


def _pick(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    if k >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def balance(
    images,
    labels,
    target_ratio: float = TARGET_RATIO,
    seed: int = 0,
    ids: Optional[Sequence[int]] = None,
    held_out: Iterable[int] = (),
) -> AugmentedSet:
    """
    Grow the minority class with flips, then nearest-neighbour averages of the
    original minority images, until minority/majority reaches ``target_ratio``
    or the generators run out. The minority never outgrows the majority.

    ``ids`` name the rows in provenance records (dataset row numbers);
    ``held_out`` lists ids that belong to the test split and must not be
    among the inputs.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(images)) if ids is None else np.asarray(ids, dtype=np.int64)
    if not len(images) == len(labels) == len(ids):
        raise ValidationError("images, labels and ids must have the same length")
    if not 0.0 < target_ratio <= 1.0:
        raise ValidationError(f"target_ratio must lie in (0, 1], got {target_ratio}")
    leaked = set(ids.tolist()) & set(held_out)
    if leaked:
        raise ValidationError(f"Held-out rows {sorted(leaked)[:5]} appear in the training split")

    originals = AugmentedSet(images.copy(), labels.copy(), [None] * len(images))
    counts = np.bincount(labels, minlength=2)
    if len(counts) != 2 or counts.min() == 0:
        logger.info("Augmentation skipped: training split does not hold two classes")
        return originals
    minority = int(np.argmin(counts))
    n_min, n_maj = int(counts[minority]), int(counts[1 - minority])
    need = min(math.ceil(target_ratio * n_maj) - n_min, n_maj - n_min)
    if need <= 0:
        logger.info(f"Augmentation skipped: class counts {counts.tolist()} already balanced")
        return originals

    rng = np.random.default_rng(seed)
    rows = np.flatnonzero(labels == minority)
    chosen = _pick(rng, len(rows), need)
    synthesized = [flip_h(images[rows[chosen]])]
    provenance = [Provenance(FLIP, (int(ids[rows[i]]),)) for i in chosen]

    remaining = need - len(chosen)
    if remaining > 0 and len(rows) >= 2:
        pairs = neighbor_pairs(images[rows])
        pairs = [pairs[i] for i in _pick(rng, len(pairs), remaining)]
        synthesized.append(nn_average(images[rows], pairs))
        provenance += [Provenance(NN_AVERAGE, (int(ids[rows[i]]), int(ids[rows[j]]))) for i, j in pairs]
        remaining -= len(pairs)
    if remaining > 0:
        logger.warning(f"Augmentation generators exhausted {remaining} images short of the target")

    extra = np.concatenate(synthesized, axis=0)
    logger.info(
        f"Augmented class {minority}: {n_min} -> {n_min + len(extra)} images "
        f"(majority {n_maj})"
    )
    return AugmentedSet(
        images=np.concatenate([originals.images, extra], axis=0),
        labels=np.concatenate([originals.labels, np.full(len(extra), minority)]),
        provenance=originals.provenance + provenance,
    )
