"""
Run configuration: a flat YAML mapping merged over the packaged defaults.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from facehop.classify import Variant
from facehop.errors import DatasetIOError, ValidationError
from facehop.features import RegionSpec, regions_from_mapping
from facehop.hoptree import N_HOPS, HopConfig, HopSpec
from facehop.saab import FixedCounts, SelectionMode, Threshold

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent / "configs"
DEFAULT_CONFIG = CONFIG_DIR / "lfw.yaml"
SELECTIONS = ("fixed", "threshold")


def _positive_int(x) -> bool:
    return int(x) == float(x) and int(x) >= 1


def _non_negative_int(x) -> bool:
    return int(x) == float(x) and int(x) >= 0


def _regions(x) -> bool:
    return isinstance(x, dict) and all(
        isinstance(v, (list, tuple)) and len(v) == 4 for v in x.values()
    )


VALIDATION_RULES: Dict[str, Dict[str, Any]] = {
    "manifest": {
        "default": None,
        "validator": lambda x: x is None or isinstance(x, str),
        "error": "manifest must be a path string",
    },
    "seed": {
        "default": 0,
        "type": int,
        "validator": _non_negative_int,
        "error": "seed must be a non-negative integer",
    },
    "train_fraction": {
        "default": 0.8,
        "type": float,
        "validator": lambda x: 0.0 < x < 1.0,
        "error": "train_fraction must lie strictly between 0 and 1",
    },
    "repetitions": {
        "default": 4,
        "type": int,
        "validator": _positive_int,
        "error": "repetitions must be an integer >= 1",
    },
    "variant": {
        "default": Variant.FACEHOP_II.value,
        "type": Variant,
        "validator": lambda x: True,
        "error": f"variant must be one of {[v.value for v in Variant]}",
    },
    "crop_scale": {
        "default": 2.2,
        "type": float,
        "validator": lambda x: x > 0,
        "error": "crop_scale must be positive",
    },
    "eye_height": {
        "default": 0.4,
        "type": float,
        "validator": lambda x: 0.0 < x < 1.0,
        "error": "eye_height must lie strictly between 0 and 1",
    },
    "window": {
        "default": 5,
        "type": int,
        "validator": _positive_int,
        "error": "window must be a positive integer",
    },
    "patch_cap": {
        "default": 1_000_000,
        "type": int,
        "validator": _positive_int,
        "error": "patch_cap must be a positive integer",
    },
    "n_comp": {
        "default": 15,
        "type": int,
        "validator": _positive_int,
        "error": "n_comp must be a positive integer",
    },
    "regions": {
        "default": {},
        "validator": _regions,
        "error": "regions must map region names to [row_start, row_stop, col_start, col_stop]",
    },
    "l2": {
        "default": 1e-3,
        "type": float,
        "validator": lambda x: x >= 0,
        "error": "l2 must be non-negative",
    },
    "n_folds": {
        "default": 5,
        "type": int,
        "validator": lambda x: x >= 2,
        "error": "n_folds must be an integer >= 2",
    },
    "augment_ratio": {
        "default": 0.9,
        "type": float,
        "validator": lambda x: 0.0 <= x <= 1.0,
        "error": "augment_ratio must lie in [0, 1] (0 disables augmentation)",
    },
    "n_jobs": {
        "default": 1,
        "type": int,
        "validator": _positive_int,
        "error": "n_jobs must be a positive integer",
    },
}

_HOP_DEFAULTS = {1: (18, 7), 2: (122, 328), 3: (233, 2817)}
for _hop, (_keep, _discard) in _HOP_DEFAULTS.items():
    VALIDATION_RULES[f"hop{_hop}_selection"] = {
        "default": "fixed",
        "validator": lambda x: x in SELECTIONS,
        "error": f"hop{_hop}_selection must be one of {list(SELECTIONS)}",
    }
    VALIDATION_RULES[f"hop{_hop}_keep"] = {
        "default": _keep,
        "type": int,
        "validator": _positive_int,
        "error": f"hop{_hop}_keep must be a positive integer",
    }
    VALIDATION_RULES[f"hop{_hop}_discard"] = {
        "default": _discard,
        "type": int,
        "validator": _non_negative_int,
        "error": f"hop{_hop}_discard must be a non-negative integer",
    }
    VALIDATION_RULES[f"hop{_hop}_threshold"] = {
        "default": 1e-3,
        "type": float,
        "validator": lambda x: 0.0 <= x <= 1.0,
        "error": f"hop{_hop}_threshold must lie in [0, 1]",
    }


def validate_config(data: Mapping[str, Any]) -> Dict[str, Any]:
    """Apply defaults and the rules table; the first failing key raises."""
    unknown = sorted(set(data) - set(VALIDATION_RULES))
    if unknown:
        raise ValidationError(f"Unknown configuration keys: {', '.join(unknown)}")

    validated = {}
    for key, rule in VALIDATION_RULES.items():
        value = data.get(key)
        if value is None:
            value = rule.get("default")
        if value is None:
            validated[key] = None
            continue
        try:
            if "type" in rule:
                if isinstance(value, bool):
                    raise TypeError(f"{key} is a boolean")
                raw, value = value, rule["type"](value)
                if rule["type"] is int and float(raw) != value:
                    raise ValueError(f"{key} is not integral")
            if not rule["validator"](value):
                raise ValidationError(f"{rule['error']} (got {value!r})")
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"{rule['error']} (got {value!r})") from e
        validated[key] = value
    return validated


@dataclass(frozen=True)
class RunConfig:
    manifest: Optional[str] = None
    seed: int = 0
    train_fraction: float = 0.8
    repetitions: int = 4
    variant: Variant = Variant.FACEHOP_II
    crop_scale: float = 2.2
    eye_height: float = 0.4
    window: int = 5
    patch_cap: int = 1_000_000
    n_comp: int = 15
    regions: Dict[str, List[int]] = field(default_factory=dict)
    l2: float = 1e-3
    n_folds: int = 5
    augment_ratio: float = 0.9
    n_jobs: int = 1
    hop1_selection: str = "fixed"
    hop1_keep: int = 18
    hop1_discard: int = 7
    hop1_threshold: float = 1e-3
    hop2_selection: str = "fixed"
    hop2_keep: int = 122
    hop2_discard: int = 328
    hop2_threshold: float = 1e-3
    hop3_selection: str = "fixed"
    hop3_keep: int = 233
    hop3_discard: int = 2817
    hop3_threshold: float = 1e-3

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        cfg = cls(**validate_config(data))
        cfg.hop_config()
        cfg.region_specs()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data

    def selection(self, hop: int) -> SelectionMode:
        if getattr(self, f"hop{hop}_selection") == "threshold":
            return Threshold(getattr(self, f"hop{hop}_threshold"))
        return FixedCounts(getattr(self, f"hop{hop}_keep"), getattr(self, f"hop{hop}_discard"))

    def hop_config(self) -> HopConfig:
        hops = tuple(
            HopSpec(self.selection(hop), pool=hop < N_HOPS) for hop in range(1, N_HOPS + 1)
        )
        return HopConfig(hops=hops, window=self.window, patch_cap=self.patch_cap)

    def region_specs(self) -> List[RegionSpec]:
        return regions_from_mapping(self.regions)


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r") as file:
            data = yaml.safe_load(file)
    except OSError as e:
        raise DatasetIOError(f"Cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ValidationError(f"Config {path} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"Config {path} must be a mapping of keys to values")
    return data


def resolve_config_path(name) -> Path:
    """A config file path, or the name of a packaged config such as ``cmu``."""
    path = Path(name)
    if path.is_file():
        return path
    packaged = CONFIG_DIR / f"{name}.yaml"
    if packaged.is_file():
        return packaged
    raise DatasetIOError(f"Config file {name} does not exist")


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Packaged defaults, then the file at ``path``, then non-None ``overrides``.

    A relative ``manifest`` in a config file is resolved against the file's
    directory.
    """
    data = _read_yaml(DEFAULT_CONFIG)
    if path is not None:
        source = resolve_config_path(path)
        user = _read_yaml(source)
        if user.get("manifest") is not None and not isinstance(user["manifest"], str):
            raise ValidationError(f"manifest must be a path string, got {user['manifest']!r}")
        if user.get("manifest"):
            user["manifest"] = str(source.parent / user["manifest"])
        data.update(user)
        logger.info(f"Loaded configuration from {source}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig.from_mapping(data)
    logger.debug(f"Run configuration: {cfg.to_dict()}")
    return cfg
