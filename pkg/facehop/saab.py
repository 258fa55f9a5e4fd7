"""
Saab transform for a single hop.

A patch is split into its DC part (projection on the constant unit vector) and
its AC part; PCA of the AC parts gives the AC kernels. A shared positive bias
keeps every response on the fitting set non-negative.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from facehop.errors import ValidationError
from facehop.pca import CovarianceAccumulator, significant, sorted_eigh

logger = logging.getLogger(__name__)

WINDOW = 5
BIAS_MARGIN = 1e-6
EIGEN_FLOOR = 1e-12


class ChannelKind(str, Enum):
    INTERMEDIATE = "intermediate"
    LEAF = "leaf"
    DISCARD = "discard"


@dataclass(frozen=True)
class Threshold:
    value: float


@dataclass(frozen=True)
class FixedCounts:
    n_keep: int
    n_discard: int


SelectionMode = Union[Threshold, FixedCounts]


@dataclass(frozen=True, eq=False)
class SaabUnit:
    window: int
    dc_kernel: np.ndarray
    ac_kernels: np.ndarray
    bias: float
    energies: np.ndarray
    total_energy: float
    channel_partition: Tuple[ChannelKind, ...] = field(default=())

    @property
    def patch_dim(self) -> int:
        return self.window * self.window

    @property
    def n_channels(self) -> int:
        return 1 + len(self.ac_kernels)

    @property
    def kernels(self) -> np.ndarray:
        return np.vstack([self.dc_kernel[None, :], self.ac_kernels])

    @property
    def energy_shares(self) -> np.ndarray:
        if self.total_energy <= 0.0:
            shares = np.zeros(self.n_channels)
            shares[0] = 1.0
            return shares
        return self.energies / self.total_energy

    def channels(self, *kinds: ChannelKind) -> Tuple[int, ...]:
        if not self.channel_partition:
            return tuple(range(self.n_channels))
        return tuple(i for i, k in enumerate(self.channel_partition) if k in kinds)

    @property
    def retained(self) -> Tuple[int, ...]:
        return self.channels(ChannelKind.INTERMEDIATE, ChannelKind.LEAF)

    @property
    def intermediate(self) -> Tuple[int, ...]:
        return self.channels(ChannelKind.INTERMEDIATE)

    def with_partition(self, kinds: Sequence[ChannelKind]) -> "SaabUnit":
        if len(kinds) != self.n_channels:
            raise ValidationError(
                f"Partition has {len(kinds)} entries for {self.n_channels} channels"
            )
        return replace(self, channel_partition=tuple(ChannelKind(k) for k in kinds))


def neighborhood_grid(maps: np.ndarray, window: int = WINDOW) -> np.ndarray:
    """
    Valid, stride-1 neighbourhoods of one or more single-channel grids.

    ``maps`` has shape ``(..., S, S)``; the result has shape
    ``(..., S - window + 1, S - window + 1, window * window)``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 2:
        raise ValidationError(f"Expected a 2-D grid, got shape {maps.shape}")
    size = min(maps.shape[-2:])
    if size < window:
        raise ValidationError(f"Grid of size {size} is smaller than the {window}x{window} window")
    views = sliding_window_view(maps, (window, window), axis=(-2, -1))
    return views.reshape(*views.shape[:-2], window * window)


def build_neighborhoods(grid: np.ndarray, window: int = WINDOW) -> np.ndarray:
    """Patch matrix of a single S x S grid, rows ordered row-major over centres."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValidationError(f"Expected a single-channel grid, got shape {grid.shape}")
    patches = neighborhood_grid(grid, window)
    return patches.reshape(-1, window * window)


class SaabAccumulator:
    """Mergeable fitting state: DC variance, AC covariance and max patch norm."""

    def __init__(self, window: int = WINDOW):
        self.window = window
        self.dim = window * window
        self.dc = CovarianceAccumulator(1)
        self.ac = CovarianceAccumulator(self.dim)
        self.max_norm = 0.0

    def observe_norms(self, patches: np.ndarray) -> "SaabAccumulator":
        patches = np.asarray(patches, dtype=np.float64).reshape(-1, self.dim)
        if len(patches):
            self.max_norm = max(self.max_norm, float(np.linalg.norm(patches, axis=1).max()))
        return self

    def update(self, patches: np.ndarray) -> "SaabAccumulator":
        patches = np.asarray(patches, dtype=np.float64).reshape(-1, self.dim)
        if patches.size and not np.all(np.isfinite(patches)):
            raise ValidationError("Patches contain non-finite values")
        means = patches.mean(axis=1, keepdims=True)
        self.dc.update(means * np.sqrt(self.dim))
        self.ac.update(patches - means)
        return self.observe_norms(patches)

    def merge(self, other: "SaabAccumulator") -> "SaabAccumulator":
        self.dc.merge(other.dc)
        self.ac.merge(other.ac)
        self.max_norm = max(self.max_norm, other.max_norm)
        return self

    def finalize(self, max_kept: Optional[int] = None) -> SaabUnit:
        if self.ac.count < self.dim:
            raise ValidationError(
                f"Saab fitting needs at least {self.dim} patches, got {self.ac.count}"
            )
        dc_kernel = np.full(self.dim, 1.0 / np.sqrt(self.dim))
        cov = self.ac.covariance()
        values, vectors = sorted_eigh(cov)

        # the DC direction spans the null space of the DC-removed covariance
        dc_axis = int(np.argmax(np.abs(vectors @ dc_kernel)))
        keep = np.ones(len(values), dtype=bool)
        keep[dc_axis] = False
        values, vectors = values[keep], vectors[keep]

        mask = significant(values, EIGEN_FLOOR)
        if max_kept is not None:
            mask &= np.arange(len(values)) < max_kept
        values, vectors = values[mask], vectors[mask]

        vectors = vectors - np.outer(vectors @ dc_kernel, dc_kernel)
        if len(vectors):
            vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)

        dc_energy = float(self.dc.covariance()[0, 0])
        total = dc_energy + float(np.trace(cov))
        unit = SaabUnit(
            window=self.window,
            dc_kernel=dc_kernel,
            ac_kernels=vectors.reshape(-1, self.dim),
            bias=(1.0 + BIAS_MARGIN) * self.max_norm,
            energies=np.concatenate([[dc_energy], values]),
            total_energy=total,
        )
        logger.debug(
            f"Saab unit fitted on {self.ac.count} patches: {len(values)} AC kernels, "
            f"bias={unit.bias:.4f}"
        )
        return unit


def fit_saab(patches: np.ndarray, max_kept: Optional[int] = None, window: int = WINDOW) -> SaabUnit:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] != window * window:
        raise ValidationError(
            f"Expected an (n, {window * window}) patch matrix, got {patches.shape}"
        )
    return SaabAccumulator(window).update(patches).finalize(max_kept)


def apply_saab(
    unit: SaabUnit, patches: np.ndarray, channels: Optional[Sequence[int]] = None
) -> np.ndarray:
    """
    Saab responses for patches of shape ``(..., patch_dim)``.

    Returns ``(..., len(channels))``; all channels when ``channels`` is None.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[-1] != unit.patch_dim:
        raise ValidationError(
            f"Patch dimension {patches.shape[-1]} does not match unit dimension {unit.patch_dim}"
        )
    selected = list(range(unit.n_channels)) if channels is None else list(channels)
    means = patches.mean(axis=-1, keepdims=True)
    responses = (patches - means) @ unit.kernels[selected].T
    if 0 in selected:
        # DC response is taken on the full patch, not its AC part
        responses[..., selected.index(0)] = patches @ unit.dc_kernel
    return responses + unit.bias


def reconstruct(unit: SaabUnit, responses: np.ndarray) -> np.ndarray:
    """Patches rebuilt from the responses of every channel of ``unit``."""
    responses = np.asarray(responses, dtype=np.float64)
    return (responses - unit.bias) @ unit.kernels


def partition_channels(
    energies: Sequence[float],
    mode: SelectionMode,
    final: bool = False,
    dc_indices: Sequence[int] = (),
) -> Tuple[ChannelKind, ...]:
    """
    Split channels into kept and discarded groups by root-normalised energy.

    Kept channels are intermediate, or leaves at the final hop. Channels in
    ``dc_indices`` are always kept.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if np.any(energies < 0):
        raise ValidationError("Channel energies must be non-negative")
    n = len(energies)
    kept_kind = ChannelKind.LEAF if final else ChannelKind.INTERMEDIATE
    kept = np.zeros(n, dtype=bool)
    kept[list(dc_indices)] = True

    if isinstance(mode, Threshold):
        kept |= energies >= mode.value
    elif isinstance(mode, FixedCounts):
        if mode.n_keep + mode.n_discard != n:
            raise ValidationError(
                f"Fixed counts {mode.n_keep} + {mode.n_discard} do not match {n} channels"
            )
        if int(kept.sum()) > mode.n_keep:
            raise ValidationError(
                f"{int(kept.sum())} DC channels cannot fit in {mode.n_keep} kept channels"
            )
        candidates = [i for i in np.argsort(-energies, kind="stable") if not kept[i]]
        kept[candidates[: mode.n_keep - int(kept.sum())]] = True
    else:
        raise ValidationError(f"Unknown selection mode {mode!r}")

    return tuple(kept_kind if k else ChannelKind.DISCARD for k in kept)


def max_pool(response: np.ndarray) -> np.ndarray:
    """2x2 -> 1x1 max pooling over a ``(..., H, W, C)`` response map."""
    response = np.asarray(response, dtype=np.float64)
    if response.ndim < 3:
        raise ValidationError(f"Expected an (H, W, C) response map, got shape {response.shape}")
    *lead, h, w, c = response.shape
    if h % 2 or w % 2:
        raise ValidationError(f"Max pooling needs even dimensions, got {h}x{w}")
    blocks = response.reshape(*lead, h // 2, 2, w // 2, 2, c)
    return blocks.max(axis=(-4, -2))
