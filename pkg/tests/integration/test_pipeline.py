import json

import numpy as np
import pytest

from facehop import pipeline
from facehop.augment import flip_h
from facehop.classify import BASE_NAMES, Variant
from facehop.cli import main
from facehop.config import load_config
from facehop.dataset import load_dataset, read_manifest
from facehop.synthetic import CLASSES
from tests.utils import balanced_labels

pytestmark = pytest.mark.integration


@pytest.fixture(scope="module")
def protocol(synthetic_dataset):
    cfg = load_config()
    return pipeline.run_protocol(synthetic_dataset, cfg)


@pytest.fixture(scope="module")
def small_model(lfw_images):
    return pipeline.fit_pipeline(lfw_images, balanced_labels(40, seed=1), load_config())


@pytest.fixture
def trained(manifest_factory, tmp_path):
    manifest = manifest_factory(n=40, seed=2)
    model = tmp_path / "model.fhop"
    assert main(["train", "--manifest", str(manifest), "--out", str(model)]) == 0
    return manifest, model


def test_synthetic_protocol_accuracy(protocol) -> None:
    summary = pipeline.summarize(protocol)
    assert summary["repetitions"] == 4
    assert summary["accuracy_mean"] >= 0.95
    best_base = max(summary["base"][name]["mean"] for name in BASE_NAMES)
    # one test image per repetition of slack
    assert summary["accuracy_mean"] >= best_base - 1.0 / protocol[0].n_test
    assert len({r.seed for r in protocol}) == 4


def test_flipped_faces_keep_their_label(protocol, synthetic_dataset) -> None:
    model = protocol[0].model
    images = synthetic_dataset.images[:120]
    proba, labels, _ = pipeline.predict_images(model, images)
    confident = np.abs(proba - 0.5) > 0.4
    assert confident.sum() >= 20
    _, flipped, _ = pipeline.predict_images(model, flip_h(images[confident]))
    assert np.mean(flipped == labels[confident]) >= 0.9


def test_reference_parameter_counts(small_model) -> None:
    second = pipeline.count_parameters(small_model, Variant.FACEHOP_II)
    first = pipeline.count_parameters(small_model, Variant.FACEHOP_I)
    assert second.total == 16_848
    assert first.total == 25_496
    assert abs(second.total - 16_895) / 16_895 < 0.05
    assert abs(first.total - 25_543) / 25_543 < 0.05
    assert ("meta LR (4 + 1)", 5) in second.items
    assert ("LR hop2_upper (1830 + 1)", 1831) in second.items
    assert ("PCA hop1_mouth (15 x 144)", 2160) in first.items


def test_cmu_parameter_counts(lfw_images) -> None:
    model = pipeline.fit_pipeline(lfw_images, balanced_labels(40, seed=2), load_config("cmu"))
    lengths = model.feature_lengths()
    assert lengths["hop1_nose"] == 360
    assert lengths["hop2_lower"] == 2340
    assert lengths["hop3"] == 186
    report = pipeline.count_parameters(model)
    assert report.total == 17_576
    assert abs(report.total - 17_628) / 17_628 < 0.05


def test_model_file_round_trip(small_model, lfw_images) -> None:
    data = pipeline.save(small_model)
    loaded = pipeline.load(data)
    assert pipeline.save(loaded) == data
    assert loaded.settings == small_model.settings
    expected, _, _ = pipeline.predict_images(small_model, lfw_images[:6])
    actual, _, _ = pipeline.predict_images(loaded, lfw_images[:6])
    np.testing.assert_allclose(actual, expected, rtol=1e-12)


def test_fitting_is_reproducible(small_model, lfw_images) -> None:
    again = pipeline.fit_pipeline(lfw_images, balanced_labels(40, seed=1), load_config())
    assert pipeline.save(again) == pipeline.save(small_model)


def test_imbalanced_repetition_is_augmented(dataset_factory) -> None:
    dataset = dataset_factory(n=120, seed=4, minority_fraction=0.3)
    cfg = load_config(overrides={"repetitions": 1})
    result = pipeline.run_repetition(dataset, cfg, 0)
    assert result.n_train == 96
    assert result.n_synthesized > 0
    assert result.n_test == 24


def test_cli_train_inspect_predict(capsys, trained) -> None:
    manifest, model = trained
    assert "Parameter count (FaceHopII)" in capsys.readouterr().out

    assert main(["inspect", "--model", str(model)]) == 0
    report = capsys.readouterr().out
    assert "hop-3: 0 intermediate, 233 leaf, 2817 discarded" in report
    assert "Energy by depth" in report

    assert main(["predict", "--model", str(model), "--manifest", str(manifest)]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(records) == 40
    assert all(r["label"] in CLASSES and 0.0 < r["probability"] < 1.0 for r in records)
    assert set(records[0]["base"]) == set(BASE_NAMES)

    image = read_manifest(manifest)[0].path
    assert main(["predict", "--model", str(model), "--image", str(image)]) == 0
    single = json.loads(capsys.readouterr().out)
    assert single["image"] == records[0]["image"]
    assert single["label"] == records[0]["label"]
    assert single["probability"] == pytest.approx(records[0]["probability"], rel=1e-9)


def test_cli_eval_writes_records(trained, tmp_path) -> None:
    manifest, model = trained
    config = tmp_path / "eval.yaml"
    config.write_text("repetitions: 2\n")
    out = tmp_path / "eval.jsonl"
    argv = ["eval", "--config", str(config), "--manifest", str(manifest), "--model", str(model)]
    assert main(argv + ["--out", str(out)]) == 0
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["repetition"] for r in lines[:-1]] == [0, 1]
    assert lines[-1]["summary"]["repetitions"] == 2
    assert 0.0 <= lines[-1]["summary"]["accuracy_mean"] <= 1.0


def test_cli_eval_table_matches_records(trained, capsys) -> None:
    manifest, model = trained
    capsys.readouterr()
    config = manifest.parent / "single.yaml"
    config.write_text("repetitions: 1\n")
    assert main(["eval", "--config", str(config), "--manifest", str(manifest)]) == 0
    out = capsys.readouterr().out.splitlines()
    records = [json.loads(line) for line in out if line.startswith("{")]
    table = [line.split() for line in out if line and not line.startswith("{")]

    run, summary = records[0], records[1]["summary"]
    assert summary["accuracy_std"] == 0.0
    assert all(summary["base"][name]["std"] == 0.0 for name in BASE_NAMES)
    rows = {row[0]: row for row in table}
    assert rows["0"][1:] == [
        str(run["seed"]),
        str(run["n_train"]),
        str(run["n_test"]),
        f"{100 * run['accuracy']:.2f}",
    ]
    assert rows["ensemble"][1:] == [f"{100 * run['accuracy']:.2f}", "0.00"]
    for name in BASE_NAMES:
        assert rows[name][1:] == [f"{100 * run['base_accuracy'][name]:.2f}", "0.00"]


def test_cli_train_is_deterministic(manifest_factory, tmp_path) -> None:
    manifest = manifest_factory(n=40, seed=5)
    first, second = tmp_path / "a.fhop", tmp_path / "b.fhop"
    for out in (first, second):
        assert main(["train", "--manifest", str(manifest), "--seed", "3", "--out", str(out)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_cli_augment(manifest_factory, tmp_path) -> None:
    manifest = manifest_factory(n=40, seed=6, minority_fraction=0.4)
    out = tmp_path / "balanced"
    assert main(["augment", "--manifest", str(manifest), "--out", str(out)]) == 0
    rows = read_manifest(out / "manifest.csv")
    synthesized = [row for row in rows if row.provenance]
    assert len(rows) == 40 + len(synthesized)
    assert synthesized and all(row.path.exists() for row in rows)
    assert {row.label for row in synthesized} == {CLASSES[1]}
    dataset = load_dataset(out / "manifest.csv")
    assert np.bincount(dataset.labels).tolist() == [24, 22]

    assert main(["augment", "--manifest", str(manifest), "--out", str(out)]) == 1


def test_cli_exit_codes(trained, tmp_path) -> None:
    manifest, model = trained
    assert main(["train", "--manifest", str(tmp_path / "absent.csv"), "--out", str(model)]) == 2
    assert main(["train", "--out", str(tmp_path / "m.fhop")]) == 1

    bad = tmp_path / "bad.yaml"
    bad.write_text("train_fraction: 2.0\n")
    assert main(["train", "--config", str(bad), "--manifest", str(manifest), "--out", str(model)]) == 1
    bad.write_text("manifest: 5\n")
    assert main(["train", "--config", str(bad), "--out", str(model)]) == 1

    corrupt = tmp_path / "corrupt.fhop"
    data = bytearray(model.read_bytes())
    data[40] ^= 0xFF
    corrupt.write_bytes(bytes(data))
    assert main(["inspect", "--model", str(corrupt)]) == 3
    assert main(["inspect", "--model", str(tmp_path / "absent.fhop")]) == 2

    stale = tmp_path / "stale.fhop"
    stale.write_bytes(b"NOPE" + model.read_bytes()[4:])
    assert main(["predict", "--model", str(stale), "--manifest", str(manifest)]) == 3
