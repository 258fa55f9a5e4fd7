"""
Hop/region feature vectors.

Hop-1 and hop-2 regions are cropped from every retained channel, reduced by a
region PCA shared across channels and concatenated in channel order. The hop-3
vector is the full hop-3 response.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.decomposition import PCA

from facehop.errors import ValidationError
from facehop.hoptree import HopOutputs
from facehop.pca import fix_signs, project

logger = logging.getLogger(__name__)

N_COMP = 15
HOP_GRIDS = {1: 28, 2: 10}
HOP3 = "hop3"


@dataclass(frozen=True)
class RegionSpec:
    """Half-open ``[row_start, row_stop) x [col_start, col_stop)`` window on a hop grid."""

    hop: int
    name: str
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.row_stop - self.row_start, self.col_stop - self.col_start

    @property
    def spatial_dim(self) -> int:
        rows, cols = self.shape
        return rows * cols

    def validate(self, grid: Optional[int] = None) -> "RegionSpec":
        if self.hop not in HOP_GRIDS:
            raise ValidationError(f"Region '{self.name}' must sit on hop 1 or 2, got {self.hop}")
        grid = HOP_GRIDS[self.hop] if grid is None else grid
        if not (0 <= self.row_start < self.row_stop <= grid and 0 <= self.col_start < self.col_stop <= grid):
            raise ValidationError(
                f"Region '{self.name}' rows [{self.row_start}, {self.row_stop}) cols "
                f"[{self.col_start}, {self.col_stop}) does not fit a {grid}x{grid} grid"
            )
        return self

    def crop(self, maps: np.ndarray) -> np.ndarray:
        """``(N, H, W, C)`` -> ``(N, C, spatial_dim)``."""
        window = maps[:, self.row_start : self.row_stop, self.col_start : self.col_stop, :]
        n, _, _, c = window.shape
        return np.moveaxis(window, -1, 1).reshape(n, c, self.spatial_dim)


def default_regions() -> List[RegionSpec]:
    regions = [
        RegionSpec(1, "hop1_left_eye", 6, 16, 1, 13),
        RegionSpec(1, "hop1_right_eye", 6, 16, 16, 28),
        RegionSpec(1, "hop1_nose", 9, 21, 9, 19),
        RegionSpec(1, "hop1_mouth", 19, 27, 5, 23),
        RegionSpec(2, "hop2_upper", 2, 5, 0, 10),
        RegionSpec(2, "hop2_lower", 6, 10, 0, 10),
        RegionSpec(2, "hop2_vertical", 0, 10, 3, 7),
    ]
    return [region.validate() for region in regions]


def regions_from_mapping(
    overrides: Mapping[str, Sequence[int]], base: Optional[Sequence[RegionSpec]] = None
) -> List[RegionSpec]:
    """Replace the windows of named regions with ``[row_start, row_stop, col_start, col_stop]``."""
    regions = {region.name: region for region in (base or default_regions())}
    for name, bounds in overrides.items():
        if name not in regions:
            raise ValidationError(f"Unknown region '{name}'; expected one of {sorted(regions)}")
        if len(bounds) != 4:
            raise ValidationError(f"Region '{name}' needs 4 bounds, got {list(bounds)}")
        r0, r1, c0, c1 = (int(b) for b in bounds)
        regions[name] = RegionSpec(regions[name].hop, name, r0, r1, c0, c1).validate()
    return list(regions.values())


@dataclass(frozen=True, eq=False)
class RegionPCA:
    region: RegionSpec
    mean: np.ndarray
    components: np.ndarray
    n_channels: int

    @property
    def n_comp(self) -> int:
        return len(self.components)

    def transform(self, maps: np.ndarray) -> np.ndarray:
        """Project each channel's crop; ``(N, H, W, C)`` -> ``(N, C * n_comp)``."""
        if maps.shape[-1] != self.n_channels:
            raise ValidationError(
                f"Region '{self.region.name}' was fitted on {self.n_channels} channels, "
                f"got {maps.shape[-1]}"
            )
        crops = self.region.crop(maps)
        return project(crops, self.components, self.mean).reshape(len(maps), -1)


def fit_region_pca(outputs: HopOutputs, spec: RegionSpec, n_comp: int = N_COMP) -> RegionPCA:
    maps = outputs.hop(spec.hop)
    if maps.ndim != 4:
        raise ValidationError(f"Expected batched hop outputs (N, H, W, C), got {maps.shape}")
    spec.validate(maps.shape[1])
    if not 1 <= n_comp <= spec.spatial_dim:
        raise ValidationError(
            f"n_comp={n_comp} must lie in [1, {spec.spatial_dim}] for region '{spec.name}'"
        )
    n_samples = maps.shape[0] * maps.shape[-1]
    if n_samples < spec.spatial_dim:
        raise ValidationError(
            f"Region '{spec.name}' needs {spec.spatial_dim} samples, got {n_samples}"
        )

    samples = spec.crop(maps).reshape(n_samples, spec.spatial_dim)
    pca = PCA(n_components=n_comp, svd_solver="full").fit(samples)
    logger.debug(f"Region PCA '{spec.name}' fitted on {n_samples} crops")
    return RegionPCA(
        region=spec,
        mean=pca.mean_.copy(),
        components=fix_signs(pca.components_),
        n_channels=maps.shape[-1],
    )


def fit_region_pcas(
    outputs: HopOutputs,
    regions: Optional[Iterable[RegionSpec]] = None,
    n_comp: int = N_COMP,
    n_jobs: int = 1,
) -> List[RegionPCA]:
    regions = list(default_regions() if regions is None else regions)

    def fit(spec: RegionSpec) -> RegionPCA:
        return fit_region_pca(outputs, spec, n_comp)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            pcas = list(executor.map(fit, regions))
    else:
        pcas = [fit(spec) for spec in regions]
    logger.info(f"Fitted {len(pcas)} region PCAs with {n_comp} components each")
    return pcas


def extract_features(outputs: HopOutputs, pcas: Sequence[RegionPCA]) -> Dict[str, np.ndarray]:
    """
    The eight named feature vectors.

    Batched outputs give ``(N, length)`` matrices; single-image outputs give
    1-D vectors.
    """
    single = outputs.hop1.ndim == 3
    if single:
        outputs = HopOutputs(outputs.hop1[None], outputs.hop2[None], outputs.hop3[None])
    features = {pca.region.name: pca.transform(outputs.hop(pca.region.hop)) for pca in pcas}
    features[HOP3] = outputs.hop3.reshape(len(outputs.hop3), -1)
    if single:
        return {name: values[0] for name, values in features.items()}
    return features
