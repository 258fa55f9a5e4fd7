"""
Dataset manifests, image files and stratified splits.

A manifest is a CSV file with a header row::

    path,label,left_eye_x,left_eye_y,right_eye_x,right_eye_y[,provenance]

Image paths are resolved relative to the manifest. Rows with all four landmark
cells blank must point at images that are already 32x32 and aligned.
"""

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.model_selection import train_test_split

from facehop.errors import DatasetIOError, ManifestSchemaError, ValidationError
from facehop.preprocess import CROP_SCALE, EYE_HEIGHT, Landmarks, preprocess_image

logger = logging.getLogger(__name__)

LANDMARK_COLUMNS = ("left_eye_x", "left_eye_y", "right_eye_x", "right_eye_y")
MANIFEST_COLUMNS = ("path", "label") + LANDMARK_COLUMNS
PROVENANCE_COLUMN = "provenance"


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    label: str
    landmarks: Optional[Landmarks]
    line: int
    provenance: str = ""


@dataclass(frozen=True, eq=False)
class Dataset:
    rows: Tuple[ManifestRow, ...]
    images: np.ndarray
    labels: np.ndarray
    classes: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.rows)


def _landmarks(record: dict, source: Path, line: int) -> Optional[Landmarks]:
    cells = [(record.get(col) or "").strip() for col in LANDMARK_COLUMNS]
    if not any(cells):
        return None
    if not all(cells):
        raise ManifestSchemaError("Landmark cells must be all filled or all blank", str(source), line)
    try:
        lx, ly, rx, ry = (float(cell) for cell in cells)
    except ValueError as e:
        raise ManifestSchemaError(f"Non-numeric landmark in {cells}", str(source), line) from e
    return Landmarks(left_eye=(lx, ly), right_eye=(rx, ry))


def read_manifest(path) -> List[ManifestRow]:
    source = Path(path)
    try:
        with open(source, newline="") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            missing = [col for col in MANIFEST_COLUMNS if col not in header]
            if missing:
                raise ManifestSchemaError(f"Missing columns: {', '.join(missing)}", str(source), 1)
            rows = []
            for record in reader:
                line = reader.line_num
                image_path = (record.get("path") or "").strip()
                label = (record.get("label") or "").strip()
                if not image_path or not label:
                    raise ManifestSchemaError("Empty path or label", str(source), line)
                rows.append(
                    ManifestRow(
                        path=source.parent / image_path,
                        label=label,
                        landmarks=_landmarks(record, source, line),
                        line=line,
                        provenance=(record.get(PROVENANCE_COLUMN) or "").strip(),
                    )
                )
    except OSError as e:
        raise DatasetIOError(f"Cannot read manifest {source}: {e}") from e
    if not rows:
        raise ManifestSchemaError("Manifest has no rows", str(source), 1)
    logger.info(f"Read {len(rows)} rows from {source}")
    return rows


def write_manifest(path, rows: Iterable[ManifestRow]) -> None:
    target = Path(path)
    with open(target, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS + (PROVENANCE_COLUMN,))
        for row in rows:
            lm = row.landmarks
            coords = ["", "", "", ""] if lm is None else [*lm.left_eye, *lm.right_eye]
            writer.writerow(
                [os.path.relpath(row.path, target.parent), row.label, *coords, row.provenance]
            )


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetIOError(f"Cannot read image {path}: {e}") from e


def write_image(path, img: np.ndarray) -> None:
    """Write a grayscale image; the format follows the suffix (``.pgm`` or ``.png``)."""
    pixels = np.clip(np.floor(np.asarray(img, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(pixels).save(path)
    except OSError as e:
        raise DatasetIOError(f"Cannot write image {path}: {e}") from e


def load_row(row: ManifestRow, crop_scale: float = CROP_SCALE, eye_height: float = EYE_HEIGHT) -> np.ndarray:
    raw = read_image(row.path)
    try:
        return preprocess_image(raw, row.landmarks, crop_scale, eye_height)
    except ValidationError as e:
        raise ValidationError(f"{row.path} (manifest line {row.line}): {e}") from e


def load_dataset(
    manifest,
    crop_scale: float = CROP_SCALE,
    eye_height: float = EYE_HEIGHT,
    classes: Optional[Sequence[str]] = None,
) -> Dataset:
    rows = read_manifest(manifest)
    names = tuple(sorted({row.label for row in rows})) if classes is None else tuple(classes)
    if len(names) != 2:
        raise ValidationError(f"Expected exactly two classes, found {list(names)}")
    unknown = [row for row in rows if row.label not in names]
    if unknown:
        raise ManifestSchemaError(
            f"Label '{unknown[0].label}' is not one of {list(names)}", str(manifest), unknown[0].line
        )
    images = np.stack([load_row(row, crop_scale, eye_height) for row in rows])
    labels = np.array([names.index(row.label) for row in rows], dtype=np.int64)
    logger.info(
        f"Loaded {len(rows)} images: {int((labels == 0).sum())} '{names[0]}', "
        f"{int((labels == 1).sum())} '{names[1]}'"
    )
    return Dataset(rows=tuple(rows), images=images, labels=labels, classes=names)


def stratified_split(labels, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row indices of a class-stratified train/test partition."""
    labels = np.asarray(labels)
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    try:
        train, test = train_test_split(
            np.arange(len(labels)),
            train_size=train_fraction,
            stratify=labels,
            random_state=seed,
        )
    except ValueError as e:
        raise ValidationError(f"Cannot split {len(labels)} samples: {e}") from e
    return np.sort(train), np.sort(test)
