"""
End-to-end composition: Saab tree, region PCAs and the classifier ensemble,
stored together in one model file.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from facehop import hoptree, modelfile
from facehop.augment import balance
from facehop.classify import (
    BASE_NAMES,
    EnsembleModel,
    LRModel,
    Metrics,
    Variant,
    evaluate,
    predict,
    train_ensemble,
)
from facehop.config import RunConfig
from facehop.dataset import Dataset, stratified_split
from facehop.errors import CorruptModelError
from facehop.features import RegionPCA, RegionSpec, extract_features, fit_region_pcas
from facehop.hoptree import HopModel, ParameterReport, fit_tree, transform_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FaceHopModel:
    hop: HopModel
    pcas: Tuple[RegionPCA, ...]
    ensemble: EnsembleModel
    classes: Tuple[str, ...] = ("0", "1")
    settings: Dict[str, Any] = field(default_factory=dict)

    @property
    def variant(self) -> Variant:
        return self.ensemble.variant

    def feature_lengths(self) -> Dict[str, int]:
        return {name: self.ensemble.base[name].n_features for name in BASE_NAMES}


def fit_pipeline(
    images,
    labels,
    cfg: RunConfig,
    classes: Sequence[str] = ("0", "1"),
    seed: Optional[int] = None,
) -> FaceHopModel:
    seed = cfg.seed if seed is None else seed
    images = np.asarray(images, dtype=np.float64)
    hop = fit_tree(images, cfg.hop_config(), n_jobs=cfg.n_jobs)
    outputs = transform_batch(hop, images)
    pcas = fit_region_pcas(outputs, cfg.region_specs(), cfg.n_comp, n_jobs=cfg.n_jobs)
    features = extract_features(outputs, pcas)
    ensemble = train_ensemble(
        features, labels, cfg.variant, cfg.l2, cfg.n_folds, seed=seed, n_jobs=cfg.n_jobs
    )
    settings = cfg.to_dict()
    settings.pop("manifest", None)
    return FaceHopModel(
        hop=hop, pcas=tuple(pcas), ensemble=ensemble, classes=tuple(classes), settings=settings
    )


def extract(model: FaceHopModel, images) -> Dict[str, np.ndarray]:
    return extract_features(transform_batch(model.hop, images), model.pcas)


def predict_images(model: FaceHopModel, images) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return predict(model.ensemble, extract(model, images))


def evaluate_images(model: FaceHopModel, images, labels) -> Metrics:
    return evaluate(model.ensemble, extract(model, images), labels)


def count_parameters(model: FaceHopModel, variant: Optional[Variant] = None) -> ParameterReport:
    return hoptree.count_parameters(
        model.hop, model.ensemble, variant or model.variant, model.pcas
    )


@dataclass
class RepetitionResult:
    repetition: int
    seed: int
    n_train: int
    n_synthesized: int
    n_test: int
    metrics: Metrics
    model: Optional[FaceHopModel] = None

    def record(self) -> Dict[str, Any]:
        return {
            "repetition": self.repetition,
            "seed": self.seed,
            "n_train": self.n_train,
            "n_synthesized": self.n_synthesized,
            "n_test": self.n_test,
            "accuracy": self.metrics.accuracy,
            "per_class_accuracy": list(self.metrics.per_class),
            "confusion": [list(row) for row in self.metrics.confusion],
            "base_accuracy": dict(self.metrics.base_accuracy),
        }


def run_repetition(dataset: Dataset, cfg: RunConfig, repetition: int) -> RepetitionResult:
    """One stratified split, training-split augmentation, fit and test-split scoring."""
    seed = cfg.seed + repetition
    train, test = stratified_split(dataset.labels, cfg.train_fraction, seed)
    if cfg.augment_ratio > 0:
        augmented = balance(
            dataset.images[train],
            dataset.labels[train],
            cfg.augment_ratio,
            seed=seed,
            ids=train,
            held_out=test.tolist(),
        )
        images, labels = augmented.images, augmented.labels
        n_synth = len(augmented.synthesized)
    else:
        images, labels, n_synth = dataset.images[train], dataset.labels[train], 0
    model = fit_pipeline(images, labels, cfg, dataset.classes, seed=seed)
    metrics = evaluate_images(model, dataset.images[test], dataset.labels[test])
    logger.info(
        f"Repetition {repetition + 1}/{cfg.repetitions} (seed {seed}): "
        f"accuracy {metrics.accuracy:.4f} on {len(test)} test images"
    )
    return RepetitionResult(repetition, seed, len(train), n_synth, len(test), metrics, model)


def run_protocol(dataset: Dataset, cfg: RunConfig) -> List[RepetitionResult]:
    return [run_repetition(dataset, cfg, r) for r in range(cfg.repetitions)]


def summarize(results: Sequence[RepetitionResult]) -> Dict[str, Any]:
    """Mean and population standard deviation of the ensemble and base accuracies."""
    accuracy = np.array([r.metrics.accuracy for r in results])
    base = {
        name: np.array([r.metrics.base_accuracy[name] for r in results]) for name in BASE_NAMES
    }
    return {
        "repetitions": len(results),
        "accuracy_mean": float(accuracy.mean()),
        "accuracy_std": float(accuracy.std()),
        "base": {
            name: {"mean": float(values.mean()), "std": float(values.std())}
            for name, values in base.items()
        },
    }


def _write_lr(writer: modelfile.SectionWriter, lr: LRModel) -> None:
    writer.array(lr.weights).float(lr.intercept).array(lr.mean).array(lr.scale)


def _read_lr(reader: modelfile.SectionReader) -> LRModel:
    weights, intercept = reader.array(), reader.float()
    return LRModel(weights=weights, intercept=intercept, mean=reader.array(), scale=reader.array())


def save(model: FaceHopModel) -> bytes:
    meta = modelfile.SectionWriter().text(
        json.dumps(
            {"classes": list(model.classes), "settings": model.settings}, sort_keys=True
        )
    )

    regions = modelfile.SectionWriter().int(len(model.pcas))
    for pca in model.pcas:
        spec = pca.region
        regions.text(spec.name).int(spec.hop)
        regions.int(spec.row_start).int(spec.row_stop).int(spec.col_start).int(spec.col_stop)
        regions.int(pca.n_channels).array(pca.mean).array(pca.components)

    classifiers = modelfile.SectionWriter().text(model.variant.value)
    for name in BASE_NAMES:
        _write_lr(classifiers.text(name), model.ensemble.base[name])
    _write_lr(classifiers, model.ensemble.meta)

    sections = [("meta", meta.getvalue())]
    sections += hoptree.write_sections(model.hop)
    sections += [("regions", regions.getvalue()), ("classifiers", classifiers.getvalue())]
    return modelfile.encode(sections)


def load(data: bytes) -> FaceHopModel:
    sections = modelfile.decode(data)
    for name in ("meta", "regions", "classifiers"):
        if name not in sections:
            raise CorruptModelError(f"Model file lacks section '{name}'")
    hop = hoptree.read_sections(sections)

    reader = modelfile.SectionReader(sections["meta"], "meta")
    try:
        meta = json.loads(reader.text())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptModelError(f"Model metadata is unreadable: {e}") from e
    reader.done()

    reader = modelfile.SectionReader(sections["regions"], "regions")
    pcas = []
    for _ in range(reader.int()):
        name, region_hop = reader.text(), reader.int()
        r0, r1, c0, c1 = reader.int(), reader.int(), reader.int(), reader.int()
        spec = RegionSpec(region_hop, name, r0, r1, c0, c1)
        pcas.append(RegionPCA(spec, n_channels=reader.int(), mean=reader.array(), components=reader.array()))
    reader.done()

    reader = modelfile.SectionReader(sections["classifiers"], "classifiers")
    try:
        variant = Variant(reader.text())
    except ValueError as e:
        raise CorruptModelError(f"Unknown ensemble variant: {e}") from e
    base = {}
    for _ in BASE_NAMES:
        name = reader.text()
        base[name] = _read_lr(reader)
    ensemble = EnsembleModel(base=base, meta=_read_lr(reader), variant=variant)
    reader.done()

    return FaceHopModel(
        hop=hop,
        pcas=tuple(pcas),
        ensemble=ensemble,
        classes=tuple(meta.get("classes", ("0", "1"))),
        settings=meta.get("settings", {}),
    )
