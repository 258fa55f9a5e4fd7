import logging

import numpy as np
import pytest
from scipy.optimize import approx_fprime
from scipy.special import expit
from sklearn.linear_model import LogisticRegression

from facehop.classify import (
    BASE_NAMES,
    LRModel,
    TrainingTrace,
    Variant,
    evaluate,
    objective_and_gradient,
    predict,
    predict_proba,
    score,
    train_ensemble,
    train_lr,
    variant_inputs,
)
from facehop.errors import ValidationError
from tests.utils import balanced_labels

pytestmark = pytest.mark.unit


def _separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = balanced_labels(n, seed)
    X = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, 3.0, -3.0)
    return X, y


def _informative_features(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = balanced_labels(n, seed)
    features = {
        name: y[:, None] * 2.0 + rng.normal(scale=0.3, size=(n, 3 + i))
        for i, name in enumerate(BASE_NAMES)
    }
    return features, y


def test_variant_inputs() -> None:
    assert variant_inputs(Variant.FACEHOP_I) == BASE_NAMES
    assert variant_inputs(Variant.FACEHOP_II) == (
        "hop2_upper",
        "hop2_lower",
        "hop2_vertical",
        "hop3",
    )


def test_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = rng.normal(size=(30, 5))
        y = rng.integers(0, 2, size=30).astype(np.float64)
        params = rng.normal(size=6)
        _, grad = objective_and_gradient(params, X, y, 0.1)
        numeric = approx_fprime(params, lambda p: objective_and_gradient(p, X, y, 0.1)[0], 1e-7)
        np.testing.assert_allclose(grad, numeric, atol=1e-5)


def test_objective_decreases_monotonically() -> None:
    X, y = _separable()
    trace = TrainingTrace()
    train_lr(X, y, trace=trace)
    assert len(trace.objective) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(trace.objective, trace.objective[1:]))
    assert trace.objective[0] == pytest.approx(np.log(2.0))


def test_separable_data_is_fitted() -> None:
    X, y = _separable()
    model = train_lr(X, y)
    assert np.all((predict_proba(model, X) >= 0.5) == y)


def test_uninformative_features_give_null_model() -> None:
    X = np.random.default_rng(2).normal(size=(2000, 2))
    y = balanced_labels(2000, seed=3)
    model = train_lr(X, y)
    assert abs(model.intercept) < 0.05
    assert np.mean(np.abs(predict_proba(model, X) - 0.5)) < 0.05


def test_agrees_with_independent_solver() -> None:
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 6)) * np.array([1.0, 10.0, 0.1, 3.0, 1.0, 5.0])
    y = (X[:, 0] + 0.2 * X[:, 1] + rng.normal(size=200) > 0).astype(np.int64)
    ours = train_lr(X, y, l2=0.1)

    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    reference = LogisticRegression(C=1.0 / (0.1 * len(y)), tol=1e-10, max_iter=10_000)
    reference.fit(Z, y)
    w = reference.coef_[0]
    cosine = ours.weights @ w / (np.linalg.norm(ours.weights) * np.linalg.norm(w))
    assert np.degrees(np.arccos(min(cosine, 1.0))) < 5.0
    assert ours.intercept == pytest.approx(reference.intercept_[0], abs=0.05)


def test_predict_proba_hand_computed() -> None:
    model = LRModel(
        weights=np.array([0.5, -1.0]),
        intercept=0.25,
        mean=np.array([1.0, 2.0]),
        scale=np.array([2.0, 4.0]),
    )
    assert predict_proba(model, np.array([3.0, 0.0])) == pytest.approx(expit(1.25))


def test_predict_proba_limits() -> None:
    zero = LRModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3))
    assert predict_proba(zero, np.array([5.0, -2.0, 7.0])) == 0.5
    confident = LRModel(np.zeros(3), 20.0, np.zeros(3), np.ones(3))
    assert predict_proba(confident, np.zeros(3)) > 0.999
    with pytest.raises(ValidationError):
        predict_proba(zero, np.zeros(4))


@pytest.mark.parametrize("intercept", [40.0, -800.0])
def test_saturated_margin_stays_inside_unit_interval(intercept) -> None:
    model = LRModel(np.zeros(2), intercept, np.zeros(2), np.ones(2))
    p = predict_proba(model, np.zeros((3, 2)))
    assert np.all((p > 0.0) & (p < 1.0))


def test_single_class_rejected() -> None:
    with pytest.raises(ValidationError):
        train_lr(np.ones((5, 2)), np.zeros(5))
    with pytest.raises(ValidationError):
        train_lr(np.ones((5, 2)), np.array([0, 0, 0, 0, 1]))


def test_constant_feature_gets_zero_weight() -> None:
    X, y = _separable()
    X = np.column_stack([X, np.full(len(X), 3.0)])
    model = train_lr(X, y)
    assert model.weights[-1] == 0.0
    assert np.all(np.isfinite(predict_proba(model, X)))


def test_standardisation_makes_training_scale_invariant() -> None:
    X, y = _separable(seed=5)
    scaled = X * np.array([4.0, 0.125])
    base, rescaled = train_lr(X, y), train_lr(scaled, y)
    np.testing.assert_allclose(rescaled.weights, base.weights, rtol=1e-12)
    np.testing.assert_allclose(predict_proba(rescaled, scaled), predict_proba(base, X), rtol=1e-12)


@pytest.mark.parametrize("variant, width", [(Variant.FACEHOP_I, 8), (Variant.FACEHOP_II, 4)])
def test_ensemble_meta_width(variant, width) -> None:
    features, y = _informative_features()
    ensemble = train_ensemble(features, y, variant=variant)
    assert ensemble.meta.n_features == width
    assert set(ensemble.base) == set(BASE_NAMES)
    proba, labels, base = predict(ensemble, features)
    assert base.shape == (60, 8)
    assert np.array_equal(labels, y)
    assert np.all((proba >= 0) & (proba <= 1))


def test_ensemble_is_seeded() -> None:
    features, y = _informative_features(seed=6)
    first = train_ensemble(features, y, seed=3)
    second = train_ensemble(features, y, seed=3)
    assert np.array_equal(first.meta.weights, second.meta.weights)


def test_ensemble_reduces_folds_for_small_classes(caplog) -> None:
    features, y = _informative_features(n=20)
    y = y.copy()
    y[np.flatnonzero(y == 1)[3:]] = 0
    with caplog.at_level(logging.WARNING):
        train_ensemble(features, y)
    assert "Reducing meta-training folds from 5 to 3" in caplog.text


def test_ensemble_needs_two_samples_per_class() -> None:
    features, y = _informative_features(n=20)
    y = np.zeros(20, dtype=np.int64)
    y[0] = 1
    with pytest.raises(ValidationError):
        train_ensemble(features, y)


def test_ensemble_missing_feature() -> None:
    features, y = _informative_features()
    del features["hop3"]
    with pytest.raises(ValidationError, match="hop3"):
        train_ensemble(features, y)


def test_score() -> None:
    metrics = score([0, 1, 1, 0], [0, 1, 1, 0])
    assert metrics.accuracy == 1.0
    assert metrics.per_class == (1.0, 1.0)
    assert metrics.confusion == ((2, 0), (0, 2))

    mixed = score([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    assert mixed.accuracy == pytest.approx(0.6)
    assert mixed.per_class == (0.5, pytest.approx(2 / 3))
    assert mixed.confusion == ((1, 1), (1, 2))
    assert mixed.n == 5


def test_score_empty_split() -> None:
    with pytest.raises(ValidationError):
        score([], [])


def test_evaluate_reports_base_accuracy() -> None:
    features, y = _informative_features()
    ensemble = train_ensemble(features, y)
    metrics = evaluate(ensemble, features, y)
    assert metrics.accuracy == 1.0
    assert set(metrics.base_accuracy) == set(BASE_NAMES)
