"""
Three-hop channel-wise Saab cascade.

Hop 1 fits one Saab unit on the input images. Every intermediate channel of a
hop is max-pooled and gets its own Saab unit at the next hop, so channels are
never mixed after hop 1. Node energies are normalised against the root and
propagated multiplicatively down the tree.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from facehop import modelfile
from facehop.classify import Variant, variant_inputs
from facehop.errors import CorruptModelError, UsageError, ValidationError
from facehop.saab import (
    WINDOW,
    ChannelKind,
    FixedCounts,
    SaabAccumulator,
    SaabUnit,
    SelectionMode,
    Threshold,
    apply_saab,
    max_pool,
    neighborhood_grid,
    partition_channels,
)

if TYPE_CHECKING:
    from facehop.classify import EnsembleModel
    from facehop.features import RegionPCA

logger = logging.getLogger(__name__)

N_HOPS = 3
PATCH_CAP = 1_000_000
BATCH = 256
_KIND_CODES = {ChannelKind.INTERMEDIATE: 0, ChannelKind.LEAF: 1, ChannelKind.DISCARD: 2}
_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass(frozen=True)
class HopSpec:
    selection: SelectionMode
    pool: bool


@dataclass(frozen=True)
class HopConfig:
    hops: Tuple[HopSpec, ...]
    window: int = WINDOW
    patch_cap: int = PATCH_CAP
    max_kept: Optional[int] = None

    def __post_init__(self):
        if len(self.hops) != N_HOPS:
            raise ValidationError(f"Exactly {N_HOPS} hops are supported, got {len(self.hops)}")
        if self.hops[-1].pool:
            raise ValidationError("The final hop must not be pooled")
        if self.window < 1 or self.patch_cap < 1:
            raise ValidationError("window and patch_cap must be positive")

    @classmethod
    def fixed(cls, counts: Sequence[Tuple[int, int]], **kwargs) -> "HopConfig":
        """Fixed (kept, discarded) channel counts per hop."""
        hops = tuple(
            HopSpec(FixedCounts(keep, discard), pool=i < N_HOPS - 1)
            for i, (keep, discard) in enumerate(counts)
        )
        return cls(hops=hops, **kwargs)

    @classmethod
    def thresholds(cls, values: Sequence[float], **kwargs) -> "HopConfig":
        hops = tuple(
            HopSpec(Threshold(value), pool=i < N_HOPS - 1) for i, value in enumerate(values)
        )
        return cls(hops=hops, **kwargs)

    @classmethod
    def lfw(cls) -> "HopConfig":
        return cls.fixed([(18, 7), (122, 328), (233, 2817)])

    @classmethod
    def cmu(cls) -> "HopConfig":
        return cls.fixed([(18, 7), (117, 333), (186, 2739)])

    @classmethod
    def keep_all(cls, **kwargs) -> "HopConfig":
        return cls.thresholds([0.0, 0.0, 0.0], **kwargs)

    def grid_sizes(self, input_size: int) -> List[int]:
        """Response grid size at each hop for an ``input_size`` square input."""
        sizes = []
        size = input_size
        for i, hop in enumerate(self.hops, start=1):
            size = size - self.window + 1
            if size < 1:
                raise ValidationError(
                    f"Input {input_size}x{input_size} is too small for hop {i} "
                    f"with a {self.window}x{self.window} window"
                )
            sizes.append(size)
            if hop.pool:
                if size % 2:
                    raise ValidationError(f"Hop {i} grid {size}x{size} cannot be 2x2 pooled")
                size //= 2
        return sizes


@dataclass(frozen=True)
class TreeNode:
    hop: int
    unit: int
    channel: int
    parent: int
    energy: float
    kind: ChannelKind


@dataclass(frozen=True, eq=False)
class HopModel:
    config: HopConfig
    input_size: int
    hop1_unit: SaabUnit
    hop2_units: Tuple[SaabUnit, ...]
    hop3_units: Tuple[SaabUnit, ...]
    node_tree: Tuple[TreeNode, ...]
    format_version: int = field(default=modelfile.FORMAT_VERSION)

    @property
    def units_by_hop(self) -> Tuple[Tuple[SaabUnit, ...], ...]:
        return ((self.hop1_unit,), self.hop2_units, self.hop3_units)

    def nodes_at(self, hop: int) -> List[TreeNode]:
        return [node for node in self.node_tree if node.hop == hop]

    def kind_counts(self, hop: int) -> Tuple[int, int, int]:
        """(intermediate, leaf, discarded) node counts at ``hop``."""
        kinds = [node.kind for node in self.nodes_at(hop)]
        return (
            kinds.count(ChannelKind.INTERMEDIATE),
            kinds.count(ChannelKind.LEAF),
            kinds.count(ChannelKind.DISCARD),
        )

    def retained_channels(self, hop: int) -> int:
        intermediate, leaf, _ = self.kind_counts(hop)
        return intermediate + leaf


@dataclass(frozen=True, eq=False)
class HopOutputs:
    """Retained responses per hop, each shaped ``(N, H, W, C)`` (or ``(H, W, C)``)."""

    hop1: np.ndarray
    hop2: np.ndarray
    hop3: np.ndarray

    def hop(self, index: int) -> np.ndarray:
        return (self.hop1, self.hop2, self.hop3)[index - 1]


def _as_batch(images) -> np.ndarray:
    batch = np.asarray(images, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[1] != batch.shape[2]:
        raise ValidationError(f"Expected square images (N, S, S), got shape {batch.shape}")
    return batch


def _fit_unit(maps: np.ndarray, cfg: HopConfig) -> SaabUnit:
    n, size, _ = maps.shape
    per_map = (size - cfg.window + 1) ** 2
    stride = max(1, math.ceil(n * per_map / cfg.patch_cap))
    acc = SaabAccumulator(cfg.window)
    for start in range(0, n, BATCH):
        patches = neighborhood_grid(maps[start : start + BATCH], cfg.window)
        patches = patches.reshape(-1, cfg.window * cfg.window)
        acc.observe_norms(patches)
        # deterministic global striding once the patch cap is exceeded
        first = (-start * per_map) % stride
        acc.update(patches[first::stride])
    return acc.finalize(cfg.max_kept)


def _respond(
    unit: SaabUnit, maps: np.ndarray, window: int, channels: Sequence[int], pool: bool
) -> np.ndarray:
    responses = apply_saab(unit, neighborhood_grid(maps, window), channels)
    return max_pool(responses) if pool else responses


def _map_parallel(func, items: Sequence, n_jobs: int) -> List:
    if n_jobs <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as executor:
        return list(executor.map(func, items))


def fit_tree(images, cfg: HopConfig, n_jobs: int = 1) -> HopModel:
    batch = _as_batch(images)
    n, size, _ = batch.shape
    if n < cfg.window * cfg.window:
        raise ValidationError(
            f"fit_tree needs at least {cfg.window * cfg.window} images, got {n}"
        )
    cfg.grid_sizes(size)

    inputs: List[np.ndarray] = [batch]
    parent_nodes: List[int] = [-1]
    parent_energy: List[float] = [1.0]
    nodes: List[TreeNode] = []
    hops: List[Tuple[SaabUnit, ...]] = []

    for h, spec in enumerate(cfg.hops, start=1):
        final = h == N_HOPS
        units = _map_parallel(lambda maps: _fit_unit(maps, cfg), inputs, n_jobs)

        energies: List[float] = []
        dc_indices: List[int] = []
        for unit, energy in zip(units, parent_energy):
            dc_indices.append(len(energies))
            energies.extend(energy * unit.energy_shares)
        kinds = partition_channels(energies, spec.selection, final=final, dc_indices=dc_indices)

        partitioned = []
        offset = 0
        next_parents: List[int] = []
        next_energy: List[float] = []
        for u, unit in enumerate(units):
            unit_kinds = kinds[offset : offset + unit.n_channels]
            partitioned.append(unit.with_partition(unit_kinds))
            for c, kind in enumerate(unit_kinds):
                node = TreeNode(h, u, c, parent_nodes[u], float(energies[offset + c]), kind)
                if kind is ChannelKind.INTERMEDIATE:
                    next_parents.append(len(nodes))
                    next_energy.append(node.energy)
                nodes.append(node)
            offset += unit.n_channels
        hops.append(tuple(partitioned))
        counts = [kinds.count(k) for k in ChannelKind]
        logger.info(
            f"Hop {h}: {len(units)} units, intermediate/leaf/discard = "
            f"{counts[0]}/{counts[1]}/{counts[2]}"
        )
        if final:
            break

        next_inputs: List[np.ndarray] = []
        for unit, maps in zip(partitioned, inputs):
            if not unit.intermediate:
                continue
            pooled = _respond(unit, maps, cfg.window, unit.intermediate, spec.pool)
            next_inputs.extend(np.ascontiguousarray(pooled[..., k]) for k in range(pooled.shape[-1]))
        inputs, parent_nodes, parent_energy = next_inputs, next_parents, next_energy

    return HopModel(
        config=cfg,
        input_size=size,
        hop1_unit=hops[0][0],
        hop2_units=hops[1],
        hop3_units=hops[2],
        node_tree=tuple(nodes),
    )


def _transform_chunk(model: HopModel, batch: np.ndarray, sizes: List[int]) -> List[np.ndarray]:
    cfg = model.config
    inputs = [batch]
    outputs = []
    for h, (units, spec) in enumerate(zip(model.units_by_hop, cfg.hops), start=1):
        retained = []
        next_inputs = []
        for unit, maps in zip(units, inputs):
            responses = apply_saab(unit, neighborhood_grid(maps, cfg.window), unit.retained)
            retained.append(responses)
            if h == N_HOPS or not unit.intermediate:
                continue
            picks = [unit.retained.index(c) for c in unit.intermediate]
            forwarded = responses[..., picks]
            if spec.pool:
                forwarded = max_pool(forwarded)
            next_inputs.extend(forwarded[..., k] for k in range(forwarded.shape[-1]))
        if retained:
            outputs.append(np.concatenate(retained, axis=-1))
        else:
            outputs.append(np.zeros((len(batch), sizes[h - 1], sizes[h - 1], 0)))
        inputs = next_inputs
    return outputs


def transform_batch(model: HopModel, images) -> HopOutputs:
    if not isinstance(model, HopModel):
        raise UsageError("transform requires a fitted HopModel")
    batch = _as_batch(images)
    if batch.shape[1] != model.input_size:
        raise ValidationError(
            f"Model expects {model.input_size}x{model.input_size} inputs, "
            f"got {batch.shape[1]}x{batch.shape[2]}"
        )
    sizes = model.config.grid_sizes(model.input_size)
    chunks = [
        _transform_chunk(model, batch[start : start + BATCH], sizes)
        for start in range(0, len(batch), BATCH)
    ]
    hop1, hop2, hop3 = (np.concatenate(parts, axis=0) for parts in zip(*chunks))
    return HopOutputs(hop1=hop1, hop2=hop2, hop3=hop3)


def transform(model: HopModel, img) -> HopOutputs:
    outputs = transform_batch(model, np.asarray(img, dtype=np.float64)[None])
    return HopOutputs(hop1=outputs.hop1[0], hop2=outputs.hop2[0], hop3=outputs.hop3[0])


def energy_by_depth(model: HopModel) -> List[Tuple[int, float, float]]:
    """
    Per depth: (sum of node energies, energy terminated at shallower depths).

    The two terms add up to one for every depth.
    """
    rows = []
    terminated = 0.0
    for hop in range(1, N_HOPS + 1):
        nodes = model.nodes_at(hop)
        rows.append((hop, float(sum(node.energy for node in nodes)), terminated))
        terminated += sum(n.energy for n in nodes if n.kind is not ChannelKind.INTERMEDIATE)
    return rows


@dataclass
class ParameterReport:
    variant: Variant
    items: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(count for _, count in self.items)

    def render(self) -> str:
        width = max([len(name) for name, _ in self.items] + [5])
        lines = [f"Parameter count ({self.variant.value})"]
        lines += [f"  {name:<{width}}  {count:>8,d}" for name, count in self.items]
        lines.append(f"  {'total':<{width}}  {self.total:>8,d}")
        return "\n".join(lines)


def count_parameters(
    model: HopModel,
    ensemble: Optional["EnsembleModel"] = None,
    variant: Variant = Variant.FACEHOP_II,
    pcas: Iterable["RegionPCA"] = (),
) -> ParameterReport:
    """
    Itemised parameter budget.

    Counted: retained Saab kernels (patch_dim weights each), one bias per
    unit, region PCA projection weights, LR weights and intercepts of the
    base classifiers the variant fuses, and the meta LR. Standardisers and
    PCA means are not counted.
    """
    variant = Variant(variant)
    used = variant_inputs(variant)
    report = ParameterReport(variant=variant)
    for hop, units in enumerate(model.units_by_hop, start=1):
        retained = sum(len(unit.retained) for unit in units)
        dim = model.config.window * model.config.window
        report.items.append((f"hop-{hop} Saab kernels ({retained} x {dim})", retained * dim))
        report.items.append((f"hop-{hop} Saab biases ({len(units)} units)", len(units)))
    for pca in pcas:
        if pca.region.name not in used:
            continue
        n_comp, spatial = pca.components.shape
        report.items.append((f"PCA {pca.region.name} ({n_comp} x {spatial})", n_comp * spatial))
    if ensemble is not None:
        for name in used:
            lr = ensemble.base[name]
            report.items.append((f"LR {name} ({lr.weights.size} + 1)", lr.weights.size + 1))
        report.items.append((f"meta LR ({len(used)} + 1)", len(used) + 1))
    return report


def write_sections(model: HopModel) -> List[Tuple[str, bytes]]:
    cfg = model.config
    config = modelfile.SectionWriter()
    config.int(model.format_version).int(model.input_size).int(cfg.window)
    config.int(cfg.patch_cap).int(-1 if cfg.max_kept is None else cfg.max_kept)
    for hop in cfg.hops:
        config.int(int(hop.pool))
        if isinstance(hop.selection, FixedCounts):
            config.text("fixed").int(hop.selection.n_keep).int(hop.selection.n_discard)
        else:
            config.text("threshold").float(hop.selection.value)

    units = modelfile.SectionWriter()
    for hop_units in model.units_by_hop:
        units.int(len(hop_units))
        for unit in hop_units:
            units.int(unit.window).float(unit.bias).float(unit.total_energy)
            units.array(unit.dc_kernel).array(unit.ac_kernels).array(unit.energies)
            units.array(np.array([_KIND_CODES[k] for k in unit.channel_partition], dtype=np.int64))

    table = np.array(
        [[n.hop, n.unit, n.channel, n.parent, _KIND_CODES[n.kind]] for n in model.node_tree],
        dtype=np.int64,
    ).reshape(-1, 5)
    tree = modelfile.SectionWriter()
    tree.array(table).array(np.array([n.energy for n in model.node_tree], dtype=np.float64))
    return [
        ("hopconfig", config.getvalue()),
        ("units", units.getvalue()),
        ("tree", tree.getvalue()),
    ]


def read_sections(sections: dict) -> HopModel:
    try:
        config = modelfile.SectionReader(sections["hopconfig"], "hopconfig")
        units_reader = modelfile.SectionReader(sections["units"], "units")
        tree = modelfile.SectionReader(sections["tree"], "tree")
    except KeyError as e:
        raise CorruptModelError(f"Model file lacks section {e}") from e

    version, input_size, window = config.int(), config.int(), config.int()
    patch_cap, max_kept = config.int(), config.int()
    hops = []
    for _ in range(N_HOPS):
        pool = bool(config.int())
        kind = config.text()
        if kind == "fixed":
            selection: SelectionMode = FixedCounts(config.int(), config.int())
        else:
            selection = Threshold(config.float())
        hops.append(HopSpec(selection, pool))
    config.done()
    cfg = HopConfig(
        hops=tuple(hops),
        window=window,
        patch_cap=patch_cap,
        max_kept=None if max_kept < 0 else max_kept,
    )

    hop_units = []
    for _ in range(N_HOPS):
        units = []
        for _ in range(units_reader.int()):
            unit_window, bias, total = units_reader.int(), units_reader.float(), units_reader.float()
            dc, ac, energies = units_reader.array(), units_reader.array(), units_reader.array()
            partition = tuple(_KINDS[int(code)] for code in units_reader.array())
            units.append(SaabUnit(unit_window, dc, ac, bias, energies, total, partition))
        hop_units.append(tuple(units))
    units_reader.done()

    table, energies = tree.array(), tree.array()
    tree.done()
    nodes = tuple(
        TreeNode(int(h), int(u), int(c), int(p), float(e), _KINDS[int(k)])
        for (h, u, c, p, k), e in zip(table, energies)
    )
    return HopModel(
        config=cfg,
        input_size=input_size,
        hop1_unit=hop_units[0][0],
        hop2_units=hop_units[1],
        hop3_units=hop_units[2],
        node_tree=nodes,
        format_version=version,
    )


def save(model: HopModel) -> bytes:
    return modelfile.encode(write_sections(model))


def load(data: bytes) -> HopModel:
    return read_sections(modelfile.decode(data))
