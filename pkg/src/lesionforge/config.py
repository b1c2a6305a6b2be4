"""Experiment configuration: flat dotted-key text files -> validated dataclasses.

Config files are plain `key=value` lines (e.g. `train.epochs=10`), `#`
comments allowed. Defaults match the published training recipe: 128×128
inputs, 0.6/0.2/0.2 splits, Adam(lr=0.001), 10 epochs, batch 32.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .ensemble import MODES, TrainConfig, uniform_weights
from .imageops import DEFAULT_CHAIN, AugmentRanges, parse_filter_chain
from .manifest import SplitFractions
from .util import sha256_text


class ConfigError(ValueError):
    """Configuration problem; carries a field-level message."""


@dataclass
class RebalanceConfig:
    use_class_weights: bool = True
    augment: bool = True
    cap_ratio: float = math.inf


@dataclass
class FilterConfig:
    chain: str = DEFAULT_CHAIN
    sobel_extra_channel: bool = False

    def steps(self):
        return parse_filter_chain(self.chain)


@dataclass
class SegConfig:
    enabled: bool = False
    mode: str = "multiply"            # multiply | crop
    mask_source: str = "model"        # model | identity
    model_path: str = ""
    epochs: int = 100
    lr: float = 0.005
    batch_size: int = 8


@dataclass
class EnsembleConfig:
    mode: str = "SOFT_VOTE"
    model_weights: tuple = field(default_factory=uniform_weights)


@dataclass
class TimingConfig:
    enabled: bool = True
    n_runs: int = 100
    n_warmup: int = 10


@dataclass
class ExperimentConfig:
    manifest: str = ""
    out_dir: str = "out"
    image_size: int = 128
    seed: int = 0
    label_order: str = "auto"               # auto | declared | first_seen
    split: SplitFractions = field(default_factory=SplitFractions)
    split_use_existing: bool = False
    rebalance: RebalanceConfig = field(default_factory=RebalanceConfig)
    augment_ranges: AugmentRanges = field(default_factory=AugmentRanges)
    filters: FilterConfig = field(default_factory=FilterConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    ens: EnsembleConfig = field(default_factory=EnsembleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    feature_imports: dict = field(default_factory=dict)  # backbone kind -> table path

    def to_flat(self) -> dict:
        """Canonical flat key->string snapshot (drives the config digest)."""
        flat = {
            "manifest": self.manifest,
            "out": self.out_dir,
            "image_size": str(self.image_size),
            "seed": str(self.seed),
            "dataset.label_order": self.label_order,
            "split.train": repr(self.split.train),
            "split.val": repr(self.split.val),
            "split.test": repr(self.split.test),
            "split.use_existing": str(self.split_use_existing).lower(),
            "rebalance.class_weights": str(self.rebalance.use_class_weights).lower(),
            "rebalance.augment": str(self.rebalance.augment).lower(),
            "rebalance.cap_ratio": repr(self.rebalance.cap_ratio),
            "augment.rotation_deg": repr(self.augment_ranges.rotation_deg),
            "augment.zoom_min": repr(self.augment_ranges.zoom_min),
            "augment.zoom_max": repr(self.augment_ranges.zoom_max),
            "augment.max_shift": repr(self.augment_ranges.max_shift),
            "augment.flip_prob": repr(self.augment_ranges.flip_prob),
            "filters.chain": self.filters.chain,
            "filters.sobel_extra_channel": str(self.filters.sobel_extra_channel).lower(),
            "seg.enabled": str(self.seg.enabled).lower(),
            "seg.mode": self.seg.mode,
            "seg.mask_source": self.seg.mask_source,
            "seg.model": self.seg.model_path,
            "seg.epochs": str(self.seg.epochs),
            "seg.lr": repr(self.seg.lr),
            "seg.batch_size": str(self.seg.batch_size),
            "ensemble.mode": self.ens.mode,
            "ensemble.model_weights": ",".join(repr(w) for w in self.ens.model_weights),
            "train.epochs": str(self.train.epochs),
            "train.batch_size": str(self.train.batch_size),
            "train.lr": repr(self.train.lr),
            "timing.enabled": str(self.timing.enabled).lower(),
            "timing.n_runs": str(self.timing.n_runs),
            "timing.n_warmup": str(self.timing.n_warmup),
        }
        for kind, path in sorted(self.feature_imports.items()):
            flat[f"features.import.{kind}"] = path
        return flat

    def digest(self) -> str:
        return sha256_text(json.dumps(self.to_flat(), sort_keys=True))[:16]

    def provenance(self) -> str:
        return f"config={self.digest()} seed={self.seed}"


def _parse_bool(key, value):
    if value.lower() in ("true", "1", "yes", "on"):
        return True
    if value.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {value!r}")


def _parse_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {value!r}") from None


def _parse_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {value!r}") from None


def parse_config_text(text: str) -> dict:
    """Flat `key=value` lines -> dict; later keys override earlier ones."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_config(pairs: dict) -> ExperimentConfig:
    """Assemble and validate an ExperimentConfig from flat key/value pairs."""
    cfg = ExperimentConfig()
    split = {"train": 0.6, "val": 0.2, "test": 0.2}
    weights = None
    for key, value in pairs.items():
        if key == "manifest":
            cfg.manifest = value
        elif key == "out":
            cfg.out_dir = value
        elif key == "image_size":
            cfg.image_size = _parse_int(key, value)
        elif key == "seed":
            cfg.seed = _parse_int(key, value)
        elif key == "dataset.label_order":
            if value not in ("auto", "declared", "first_seen"):
                raise ConfigError(f"{key}: must be auto|declared|first_seen, got {value!r}")
            cfg.label_order = value
        elif key in ("split.train", "split.val", "split.test"):
            split[key.split(".")[1]] = _parse_float(key, value)
        elif key == "split.use_existing":
            cfg.split_use_existing = _parse_bool(key, value)
        elif key == "rebalance.class_weights":
            cfg.rebalance.use_class_weights = _parse_bool(key, value)
        elif key == "rebalance.augment":
            cfg.rebalance.augment = _parse_bool(key, value)
        elif key == "rebalance.cap_ratio":
            cfg.rebalance.cap_ratio = math.inf if value in ("inf", "parity") \
                else _parse_float(key, value)
        elif key == "augment.rotation_deg":
            cfg.augment_ranges = _replace_range(cfg.augment_ranges, rotation_deg=_parse_float(key, value))
        elif key == "augment.zoom_min":
            cfg.augment_ranges = _replace_range(cfg.augment_ranges, zoom_min=_parse_float(key, value))
        elif key == "augment.zoom_max":
            cfg.augment_ranges = _replace_range(cfg.augment_ranges, zoom_max=_parse_float(key, value))
        elif key == "augment.max_shift":
            cfg.augment_ranges = _replace_range(cfg.augment_ranges, max_shift=_parse_float(key, value))
        elif key == "augment.flip_prob":
            cfg.augment_ranges = _replace_range(cfg.augment_ranges, flip_prob=_parse_float(key, value))
        elif key == "filters.chain":
            cfg.filters.chain = value
        elif key == "filters.sobel_extra_channel":
            cfg.filters.sobel_extra_channel = _parse_bool(key, value)
        elif key == "seg.enabled":
            cfg.seg.enabled = _parse_bool(key, value)
        elif key == "seg.mode":
            if value not in ("multiply", "crop"):
                raise ConfigError(f"{key}: must be multiply|crop, got {value!r}")
            cfg.seg.mode = value
        elif key == "seg.mask_source":
            if value not in ("model", "identity"):
                raise ConfigError(f"{key}: must be model|identity, got {value!r}")
            cfg.seg.mask_source = value
        elif key == "seg.model":
            cfg.seg.model_path = value
        elif key == "seg.epochs":
            cfg.seg.epochs = _parse_int(key, value)
        elif key == "seg.lr":
            cfg.seg.lr = _parse_float(key, value)
        elif key == "seg.batch_size":
            cfg.seg.batch_size = _parse_int(key, value)
        elif key == "ensemble.mode":
            if value not in MODES:
                raise ConfigError(f"{key}: must be one of {'|'.join(MODES)}, got {value!r}")
            cfg.ens.mode = value
        elif key == "ensemble.model_weights":
            weights = tuple(_parse_float(key, v) for v in value.split(","))
        elif key == "train.epochs":
            cfg.train = _replace_train(cfg.train, epochs=_parse_int(key, value))
        elif key == "train.batch_size":
            cfg.train = _replace_train(cfg.train, batch_size=_parse_int(key, value))
        elif key == "train.lr":
            cfg.train = _replace_train(cfg.train, lr=_parse_float(key, value))
        elif key == "timing.enabled":
            cfg.timing.enabled = _parse_bool(key, value)
        elif key == "timing.n_runs":
            cfg.timing.n_runs = _parse_int(key, value)
        elif key == "timing.n_warmup":
            cfg.timing.n_warmup = _parse_int(key, value)
        elif key.startswith("features.import."):
            kind = key[len("features.import."):]
            cfg.feature_imports[kind] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")

    try:
        cfg.split = SplitFractions(**split)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if weights is not None:
        if len(weights) != 3:
            raise ConfigError(f"ensemble.model_weights: need 3 weights, got {len(weights)}")
        if any(w < 0 for w in weights):
            raise ConfigError(f"ensemble.model_weights: weights must be nonnegative: {weights}")
        total = sum(weights)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"ensemble.model_weights: must sum to 1, got {total}")
        cfg.ens.model_weights = tuple(w / total for w in weights)
    _validate(cfg)
    return cfg


def _replace_range(r: AugmentRanges, **kw) -> AugmentRanges:
    from dataclasses import replace
    return replace(r, **kw)


def _replace_train(t: TrainConfig, **kw) -> TrainConfig:
    from dataclasses import replace
    try:
        return replace(t, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _validate(cfg: ExperimentConfig):
    if cfg.image_size < 16:
        raise ConfigError(f"image_size: must be >= 16, got {cfg.image_size}")
    if cfg.rebalance.cap_ratio < 1:
        raise ConfigError(f"rebalance.cap_ratio: must be >= 1, got {cfg.rebalance.cap_ratio}")
    if not 0.0 <= cfg.augment_ranges.flip_prob <= 1.0:
        raise ConfigError(f"augment.flip_prob: must lie in [0,1]")
    if cfg.augment_ranges.zoom_min <= 0 or cfg.augment_ranges.zoom_max < cfg.augment_ranges.zoom_min:
        raise ConfigError("augment.zoom_min/zoom_max: need 0 < zoom_min <= zoom_max")
    if cfg.train.epochs < 0:
        raise ConfigError(f"train.epochs: must be >= 0, got {cfg.train.epochs}")
    if cfg.timing.n_runs < 10:
        raise ConfigError(f"timing.n_runs: must be >= 10, got {cfg.timing.n_runs}")
    try:
        cfg.filters.steps()
    except ValueError as e:
        raise ConfigError(f"filters.chain: {e}") from None
    for kind in cfg.feature_imports:
        if kind not in ("S-MOBILE", "S-VGG", "S-INCEPT"):
            raise ConfigError(f"features.import.{kind}: unknown backbone kind")


def load_config(path, overrides: dict = None) -> ExperimentConfig:
    """Read a config file, apply overrides, validate referenced paths."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs = parse_config_text(path.read_text(encoding="utf-8"))
    pairs.update(overrides or {})
    cfg = build_config(pairs)
    if not cfg.manifest:
        raise ConfigError("manifest: required key missing")
    if not Path(cfg.manifest).exists():
        raise ConfigError(f"manifest: file not found: {cfg.manifest}")
    for kind, p in cfg.feature_imports.items():
        if not Path(p).exists():
            raise ConfigError(f"features.import.{kind}: file not found: {p}")
    # the config seed drives head init and batching
    cfg.train = _replace_train(cfg.train, seed=cfg.seed)
    return cfg
