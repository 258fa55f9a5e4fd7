import numpy as np
import pytest

from facehop.dataset import (
    ManifestRow,
    load_dataset,
    load_row,
    read_image,
    read_manifest,
    stratified_split,
    write_image,
    write_manifest,
)
from facehop.errors import DatasetIOError, ManifestSchemaError, ValidationError
from facehop.preprocess import Landmarks
from facehop.synthetic import CLASSES, make_dataset
from tests.utils import random_images

pytestmark = pytest.mark.unit

HEADER = "path,label,left_eye_x,left_eye_y,right_eye_x,right_eye_y\n"


@pytest.fixture
def write_csv(tmp_path):
    def _write(text: str):
        path = tmp_path / "manifest.csv"
        path.write_text(text)
        return path

    return _write


def test_read_manifest_rows(write_csv, tmp_path) -> None:
    path = write_csv(HEADER + "a.png,male,10,12,20,12.5\nsub/b.png,female,,,,\n")
    rows = read_manifest(path)
    assert [row.line for row in rows] == [2, 3]
    assert rows[0].path == tmp_path / "a.png"
    assert rows[0].landmarks == Landmarks((10.0, 12.0), (20.0, 12.5))
    assert rows[1].path == tmp_path / "sub" / "b.png"
    assert rows[1].landmarks is None


def test_missing_column(write_csv) -> None:
    path = write_csv("path,label,left_eye_x\na.png,male,1\n")
    with pytest.raises(ManifestSchemaError) as excinfo:
        read_manifest(path)
    assert excinfo.value.line == 1
    assert "right_eye_y" in str(excinfo.value)


def test_partial_landmarks(write_csv) -> None:
    path = write_csv(HEADER + "a.png,male,1,2,3,4\nb.png,male,1,,3,4\n")
    with pytest.raises(ManifestSchemaError) as excinfo:
        read_manifest(path)
    assert excinfo.value.line == 3


def test_non_numeric_landmark(write_csv) -> None:
    with pytest.raises(ManifestSchemaError):
        read_manifest(write_csv(HEADER + "a.png,male,1,two,3,4\n"))


def test_empty_manifest(write_csv) -> None:
    with pytest.raises(ManifestSchemaError):
        read_manifest(write_csv(HEADER))


def test_missing_manifest(tmp_path) -> None:
    with pytest.raises(DatasetIOError):
        read_manifest(tmp_path / "absent.csv")


def test_write_manifest_uses_relative_paths(tmp_path) -> None:
    rows = [
        ManifestRow(tmp_path / "img" / "a.pgm", "male", Landmarks((1.0, 2.0), (3.0, 2.0)), 2),
        ManifestRow(tmp_path / "img" / "b.pgm", "female", None, 3, "flip:0"),
    ]
    target = tmp_path / "manifest.csv"
    write_manifest(target, rows)
    lines = target.read_text().splitlines()
    assert lines[0] == "path,label,left_eye_x,left_eye_y,right_eye_x,right_eye_y,provenance"
    assert lines[2] == "img/b.pgm,female,,,,,flip:0"
    again = read_manifest(target)
    assert again == rows


def test_image_write_rounds_and_clips(tmp_path) -> None:
    path = tmp_path / "pixels.png"
    write_image(path, np.array([[12.4, 12.5], [300.0, -3.0]]))
    assert read_image(path).tolist() == [[12.0, 13.0], [255.0, 0.0]]


def test_unreadable_image(tmp_path) -> None:
    path = tmp_path / "broken.pgm"
    path.write_text("not an image")
    with pytest.raises(DatasetIOError):
        read_image(path)


def test_load_row_with_landmarks(tmp_path) -> None:
    path = tmp_path / "face.png"
    write_image(path, random_images(1, size=64, seed=2)[0])
    img = load_row(ManifestRow(path, "male", Landmarks((22.0, 28.0), (42.0, 28.5)), 2))
    assert img.shape == (32, 32)


def test_load_row_reports_manifest_line(tmp_path) -> None:
    path = tmp_path / "small.png"
    write_image(path, random_images(1, size=40)[0])
    with pytest.raises(ValidationError, match="manifest line 7"):
        load_row(ManifestRow(path, "male", None, 7))


def test_load_dataset(manifest_factory) -> None:
    dataset = load_dataset(manifest_factory(n=40, seed=3))
    images, labels = make_dataset(40, seed=3)
    assert dataset.classes == CLASSES
    assert len(dataset) == 40
    assert np.array_equal(dataset.labels, labels)
    np.testing.assert_array_equal(dataset.images, np.floor(images + 0.5))


def test_load_dataset_needs_two_classes(write_csv, tmp_path) -> None:
    for name in ("a", "b", "c"):
        write_image(tmp_path / f"{name}.png", random_images(1)[0])
    path = write_csv(HEADER + "a.png,x,,,,\nb.png,y,,,,\nc.png,z,,,,\n")
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_stratified_split() -> None:
    labels = np.array([0] * 60 + [1] * 40)
    train, test = stratified_split(labels, 0.8, seed=1)
    assert len(train) == 80 and len(test) == 20
    assert not set(train) & set(test)
    assert np.bincount(labels[test]).tolist() == [12, 8]
    again = stratified_split(labels, 0.8, seed=1)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])
    assert not np.array_equal(stratified_split(labels, 0.8, seed=2)[1], test)


def test_stratified_split_rejects_bad_input() -> None:
    with pytest.raises(ValidationError):
        stratified_split(np.array([0, 1] * 5), 1.0, seed=0)
    with pytest.raises(ValidationError):
        stratified_split(np.array([0] * 9 + [1]), 0.8, seed=0)
