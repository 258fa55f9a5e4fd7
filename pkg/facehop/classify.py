"""
Hop/region logistic-regression classifiers and their stacked meta classifier.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.model_selection import StratifiedKFold

from facehop.errors import ValidationError

logger = logging.getLogger(__name__)

L2 = 1e-3
MAX_ITER = 1000
GRAD_TOL = 1e-6
MIN_STD = 1e-12
N_FOLDS = 5
P_MIN = np.finfo(np.float64).tiny
P_MAX = np.nextafter(1.0, 0.0)

BASE_NAMES = (
    "hop1_left_eye",
    "hop1_right_eye",
    "hop1_nose",
    "hop1_mouth",
    "hop2_upper",
    "hop2_lower",
    "hop2_vertical",
    "hop3",
)


class Variant(str, Enum):
    FACEHOP_I = "FaceHopI"
    FACEHOP_II = "FaceHopII"


def variant_inputs(variant: Variant) -> Tuple[str, ...]:
    """Base classifiers whose soft decisions feed the meta classifier."""
    if Variant(variant) is Variant.FACEHOP_I:
        return BASE_NAMES
    return tuple(name for name in BASE_NAMES if not name.startswith("hop1_"))


@dataclass(frozen=True, eq=False)
class LRModel:
    weights: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.weights)


@dataclass
class TrainingTrace:
    objective: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"Labels must be one-dimensional, got shape {y.shape}")
    if not np.all(np.isin(y, (0, 1))):
        raise ValidationError("Labels must be binary (0 or 1)")
    return y.astype(np.float64)


def objective_and_gradient(
    params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float
) -> Tuple[float, np.ndarray]:
    """
    Mean logistic loss plus ``l2 / 2 * ||w||^2`` and its gradient.

    ``params`` is ``[w..., b]``; the intercept is not regularised.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    residual = (expit(z) - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ residual + l2 * w
    grad[-1] = residual.sum()
    return loss, grad


def train_lr(
    X,
    y,
    l2: float = L2,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
    trace: Optional[TrainingTrace] = None,
) -> LRModel:
    X = np.asarray(X, dtype=np.float64)
    y = _labels(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError(f"Feature matrix {X.shape} does not match {len(y)} labels")
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts.min() == 0:
        raise ValidationError("Training labels contain a single class")
    if counts.min() < 2:
        raise ValidationError(f"Each class needs at least 2 samples, got counts {counts.tolist()}")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = std < MIN_STD
    scale = np.where(degenerate, 1.0, std)
    Z = (X - mean) / scale
    Z[:, degenerate] = 0.0

    history = trace if trace is not None else TrainingTrace()
    x0 = np.zeros(X.shape[1] + 1)
    history.objective.append(objective_and_gradient(x0, Z, y, l2)[0])

    def record(xk):
        history.objective.append(objective_and_gradient(xk, Z, y, l2)[0])

    result = minimize(
        objective_and_gradient,
        x0,
        args=(Z, y, l2),
        jac=True,
        method="L-BFGS-B",
        callback=record if trace is not None else None,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0},
    )
    history.iterations = int(result.nit)
    history.converged = float(np.abs(result.jac).max()) < tol

    weights = result.x[:-1].copy()
    weights[degenerate] = 0.0
    logger.debug(
        f"LR trained on {X.shape[0]}x{X.shape[1]}: {result.nit} iterations, "
        f"objective={result.fun:.6f}, converged={history.converged}"
    )
    return LRModel(weights=weights, intercept=float(result.x[-1]), mean=mean, scale=scale)


def predict_proba(m: LRModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.n_features:
        raise ValidationError(
            f"Feature length {x.shape[-1]} does not match classifier length {m.n_features}"
        )
    # strictly inside (0, 1) even for saturated margins
    return np.clip(expit(((x - m.mean) / m.scale) @ m.weights + m.intercept), P_MIN, P_MAX)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    base: Dict[str, LRModel]
    meta: LRModel
    variant: Variant

    @property
    def meta_inputs(self) -> Tuple[str, ...]:
        return variant_inputs(self.variant)


def _check_features(features: Mapping[str, np.ndarray], names: Sequence[str]) -> int:
    missing = [name for name in names if name not in features]
    if missing:
        raise ValidationError(f"Missing feature vectors: {', '.join(missing)}")
    sizes = {len(features[name]) for name in names}
    if len(sizes) != 1:
        raise ValidationError(f"Feature matrices disagree on sample count: {sorted(sizes)}")
    return sizes.pop()


def _train_base(
    features: Mapping[str, np.ndarray],
    y: np.ndarray,
    names: Sequence[str],
    l2: float,
    rows: Optional[np.ndarray] = None,
    n_jobs: int = 1,
) -> Dict[str, LRModel]:
    def fit(name: str) -> LRModel:
        X = features[name] if rows is None else features[name][rows]
        return train_lr(X, y if rows is None else y[rows], l2)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            return dict(zip(names, executor.map(fit, names)))
    return {name: fit(name) for name in names}


def train_ensemble(
    features: Mapping[str, np.ndarray],
    labels,
    variant: Variant = Variant.FACEHOP_II,
    l2: float = L2,
    n_folds: int = N_FOLDS,
    seed: int = 0,
    n_jobs: int = 1,
) -> EnsembleModel:
    """
    Train all eight base classifiers and a meta classifier over out-of-fold
    base probabilities of the variant's inputs.
    """
    variant = Variant(variant)
    y = _labels(labels)
    _check_features(features, BASE_NAMES)
    counts = np.bincount(y.astype(np.int64), minlength=2)
    folds = min(n_folds, int(counts.min()))
    if folds < 2:
        raise ValidationError(
            f"Out-of-fold meta training needs 2 samples per class, got counts {counts.tolist()}"
        )
    if folds < n_folds:
        logger.warning(f"Reducing meta-training folds from {n_folds} to {folds}")

    inputs = variant_inputs(variant)
    oof = np.zeros((len(y), len(inputs)))
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    for fold, (train_rows, held_rows) in enumerate(splitter.split(np.zeros(len(y)), y)):
        models = _train_base(features, y, inputs, l2, rows=train_rows, n_jobs=n_jobs)
        for j, name in enumerate(inputs):
            oof[held_rows, j] = predict_proba(models[name], features[name][held_rows])
        logger.debug(f"Out-of-fold predictions for fold {fold + 1}/{folds} done")

    base = _train_base(features, y, BASE_NAMES, l2, n_jobs=n_jobs)
    meta = train_lr(oof, y, l2)
    logger.info(f"Trained {len(base)} base classifiers and a {len(inputs)}-input meta classifier")
    return EnsembleModel(base=base, meta=meta, variant=variant)


def base_probabilities(ensemble: EnsembleModel, features: Mapping[str, np.ndarray]) -> np.ndarray:
    """Soft decisions of every base classifier, columns in ``BASE_NAMES`` order."""
    _check_features(features, BASE_NAMES)
    return np.column_stack(
        [predict_proba(ensemble.base[name], features[name]) for name in BASE_NAMES]
    )


def predict(
    ensemble: EnsembleModel, features: Mapping[str, np.ndarray]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (meta probabilities, labels at 0.5, base probabilities)."""
    base = base_probabilities(ensemble, features)
    columns = [BASE_NAMES.index(name) for name in ensemble.meta_inputs]
    proba = predict_proba(ensemble.meta, base[:, columns])
    return proba, (proba >= 0.5).astype(np.int64), base


@dataclass
class Metrics:
    accuracy: float
    per_class: Tuple[float, float]
    confusion: Tuple[Tuple[int, int], Tuple[int, int]]
    n: int
    base_accuracy: Dict[str, float] = field(default_factory=dict)


def score(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise ValidationError("Cannot evaluate an empty split")
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    per_class = tuple(
        float(confusion[c, c] / confusion[c].sum()) if confusion[c].sum() else float("nan")
        for c in (0, 1)
    )
    return Metrics(
        accuracy=float(np.mean(y_true == y_pred)),
        per_class=per_class,
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        n=len(y_true),
    )


def evaluate(ensemble: EnsembleModel, features: Mapping[str, np.ndarray], labels) -> Metrics:
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("Cannot evaluate an empty split")
    _, predicted, base = predict(ensemble, features)
    metrics = score(y, predicted)
    metrics.base_accuracy = {
        name: float(np.mean((base[:, j] >= 0.5) == y)) for j, name in enumerate(BASE_NAMES)
    }
    return metrics
