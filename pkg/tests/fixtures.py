from pathlib import Path

import numpy as np
import pytest

from facehop.dataset import Dataset, ManifestRow
from facehop.features import default_regions, fit_region_pcas
from facehop.hoptree import HopConfig, fit_tree, transform_batch
from facehop.synthetic import CLASSES, make_dataset, write_dataset
from tests.utils import random_images


@pytest.fixture(scope="session")
def lfw_images() -> np.ndarray:
    return random_images(40, seed=1)


@pytest.fixture(scope="session")
def lfw_tree(lfw_images):
    return fit_tree(lfw_images, HopConfig.lfw())


@pytest.fixture(scope="session")
def lfw_outputs(lfw_tree, lfw_images):
    return transform_batch(lfw_tree, lfw_images)


@pytest.fixture(scope="session")
def lfw_pcas(lfw_outputs):
    return fit_region_pcas(lfw_outputs, default_regions(), n_comp=15)


def _in_memory_dataset(n=400, seed=0, minority_fraction=0.5) -> Dataset:
    images, labels = make_dataset(n, seed=seed, minority_fraction=minority_fraction)
    rows = tuple(
        ManifestRow(Path(f"img_{i:05d}.pgm"), CLASSES[label], None, i + 2)
        for i, label in enumerate(labels)
    )
    return Dataset(rows=rows, images=images, labels=labels, classes=CLASSES)


@pytest.fixture(scope="session")
def synthetic_dataset() -> Dataset:
    return _in_memory_dataset()


@pytest.fixture(scope="function")
def dataset_factory():
    """Factory fixture building an in-memory synthetic Dataset"""
    return _in_memory_dataset


@pytest.fixture(scope="function")
def manifest_factory(tmp_path):
    """Factory fixture writing a synthetic dataset to disk and returning its manifest"""

    def _make_manifest(n=40, seed=0, minority_fraction=0.5, name="data"):
        return write_dataset(tmp_path / name, n=n, seed=seed, minority_fraction=minority_fraction)

    return _make_manifest


@pytest.fixture
def assert_orthonormal():
    def _assert_orthonormal(rows: np.ndarray, tol: float = 1e-10):
        gram = rows @ rows.T
        assert np.abs(gram - np.eye(len(rows))).max() < tol

    return _assert_orthonormal
