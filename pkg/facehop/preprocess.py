"""
Geometric and photometric normalisation of grayscale face images.

Images are 2-D float64 arrays indexed ``[row, col]`` holding intensities in
[0, 255]. Landmark coordinates are ``(x, y)`` = ``(col, row)`` in pixels.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from facehop.errors import ValidationError

logger = logging.getLogger(__name__)

TARGET_SIZE = 32
MIN_CROP = 8
CROP_SCALE = 2.2
EYE_HEIGHT = 0.4

Point = Tuple[float, float]


@dataclass(frozen=True)
class Landmarks:
    left_eye: Point
    right_eye: Point
    face_box: Optional[Tuple[float, float, float, float]] = None

    @property
    def midpoint(self) -> Point:
        return (
            (self.left_eye[0] + self.right_eye[0]) / 2.0,
            (self.left_eye[1] + self.right_eye[1]) / 2.0,
        )

    @property
    def distance(self) -> float:
        return math.hypot(
            self.right_eye[0] - self.left_eye[0], self.right_eye[1] - self.left_eye[1]
        )

    def validate(self, width: int, height: int) -> "Landmarks":
        if self.left_eye == self.right_eye:
            raise ValidationError(f"Degenerate landmarks: both eyes at {self.left_eye}")
        if not self.left_eye[0] < self.right_eye[0]:
            raise ValidationError(
                f"Left eye x ({self.left_eye[0]}) must be smaller than right eye x "
                f"({self.right_eye[0]})"
            )
        for name, (x, y) in (("left_eye", self.left_eye), ("right_eye", self.right_eye)):
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise ValidationError(
                    f"{name} ({x}, {y}) lies outside a {width}x{height} image"
                )
        return self


def as_image(data, min_size: int = TARGET_SIZE) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError(f"Expected a 2-D grayscale image, got shape {img.shape}")
    if min(img.shape) < min_size:
        raise ValidationError(
            f"Image {img.shape[1]}x{img.shape[0]} is smaller than {min_size}x{min_size}"
        )
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 255:
        raise ValidationError("Pixel intensities must be finite values in [0, 255]")
    return img


def rotation_angle(lm: Landmarks) -> float:
    """Angle of the eye line in degrees (positive when the right eye is lower)."""
    dx = lm.right_eye[0] - lm.left_eye[0]
    dy = lm.right_eye[1] - lm.left_eye[1]
    return math.degrees(math.atan2(dy, dx))


def aligned_landmarks(lm: Landmarks) -> Landmarks:
    """Landmark positions after :func:`align` (eyes level about their midpoint)."""
    cx, cy = lm.midpoint
    half = lm.distance / 2.0
    return Landmarks(left_eye=(cx - half, cy), right_eye=(cx + half, cy))


def align(img: np.ndarray, lm: Landmarks) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    lm.validate(w, h)

    theta = math.atan2(lm.right_eye[1] - lm.left_eye[1], lm.right_eye[0] - lm.left_eye[0])
    if theta == 0.0:
        return img.copy()

    cx, cy = lm.midpoint
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = cols - cx
    dy = rows - cy
    # inverse map: output pixel -> source position
    src_x = cx + math.cos(theta) * dx - math.sin(theta) * dy
    src_y = cy + math.sin(theta) * dx + math.cos(theta) * dy
    return map_coordinates(img, [src_y, src_x], order=1, mode="constant", cval=0.0)


def crop_window(
    shape: Tuple[int, int],
    lm: Landmarks,
    crop_scale: float = CROP_SCALE,
    eye_height: float = EYE_HEIGHT,
) -> Tuple[int, int, int]:
    """Return ``(top, left, side)`` of the square face crop inside ``shape``."""
    h, w = shape
    side = int(round(crop_scale * lm.distance))
    side = min(side, h, w)
    if side < MIN_CROP:
        raise ValidationError(
            f"Crop window {side}x{side} is smaller than {MIN_CROP}x{MIN_CROP}"
        )
    cx, cy = lm.midpoint
    left = int(round(cx - side / 2.0))
    top = int(round(cy - eye_height * side))
    left = min(max(left, 0), w - side)
    top = min(max(top, 0), h - side)
    return top, left, side


def crop(
    img: np.ndarray,
    lm: Landmarks,
    crop_scale: float = CROP_SCALE,
    eye_height: float = EYE_HEIGHT,
) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    top, left, side = crop_window(img.shape, lm, crop_scale, eye_height)
    return img[top : top + side, left : left + side].copy()


def equalize_hist(img: np.ndarray) -> np.ndarray:
    levels = np.clip(np.floor(np.asarray(img, dtype=np.float64) + 0.5), 0, 255)
    levels = levels.astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = levels.size
    cdf_min = cdf[levels.min()]
    if n == cdf_min:
        return np.zeros(levels.shape, dtype=np.float64)
    lut = np.floor(255.0 * (cdf - cdf_min) / (n - cdf_min) + 0.5)
    lut = np.clip(lut, 0, 255)
    return lut[levels]


def resize_to_32(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h != w:
        raise ValidationError(f"resize_to_32 expects a square image, got {w}x{h}")
    if h == TARGET_SIZE:
        return img.copy()
    scale = h / TARGET_SIZE
    centers = (np.arange(TARGET_SIZE) + 0.5) * scale - 0.5
    ys, xs = np.meshgrid(centers, centers, indexing="ij")
    return np.clip(map_coordinates(img, [ys, xs], order=1, mode="nearest"), 0.0, 255.0)


def preprocess_image(
    img,
    lm: Optional[Landmarks],
    crop_scale: float = CROP_SCALE,
    eye_height: float = EYE_HEIGHT,
) -> np.ndarray:
    """
    Run align -> crop -> equalize_hist -> resize_to_32.

    An image that is already 32x32 and comes without landmarks is treated as
    pre-aligned and returned unchanged.
    """
    if lm is None:
        aligned = as_image(img)
        if aligned.shape != (TARGET_SIZE, TARGET_SIZE):
            raise ValidationError(
                f"Image without landmarks must already be {TARGET_SIZE}x{TARGET_SIZE}"
            )
        return aligned.copy()

    raw = as_image(img)
    logger.debug(f"Aligning image by {-rotation_angle(lm):.2f} degrees")
    rotated = align(raw, lm)
    face = crop(rotated, aligned_landmarks(lm), crop_scale, eye_height)
    face = equalize_hist(face)
    if face.shape[0] != face.shape[1]:
        raise ValidationError(f"Crop produced a non-square face {face.shape}")
    return resize_to_32(face)
