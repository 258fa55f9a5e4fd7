import numpy as np


def random_images(n: int, size: int = 32, seed: int = 0) -> np.ndarray:
    """Uniform random grayscale images in [0, 255]."""
    return np.random.default_rng(seed).uniform(0.0, 255.0, size=(n, size, size))


def sin_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Sine of the angle between the lines spanned by two vectors."""
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    return float(np.linalg.norm(u - (u @ v) * v))


def brute_force_eigh(samples: np.ndarray):
    """Population covariance eigenpairs sorted by decreasing eigenvalue (columns as rows)."""
    centered = samples - samples.mean(axis=0)
    cov = centered.T @ centered / len(samples)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order].T


def balanced_labels(n: int, seed: int = 0) -> np.ndarray:
    labels = np.array([0, 1] * (n // 2), dtype=np.int64)
    np.random.default_rng(seed).shuffle(labels)
    return labels
