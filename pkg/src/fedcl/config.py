"""Experiment configuration: validated dataclasses, YAML loading, presets,
and the ablation arm definitions.

An arm names a (metadata_enabled, aggregation_mode) combination so every
ablation runs from one base config:

    fedavg      no metadata, sample-count aggregation
    fedmoco_m   metadata only
    fedmoco_s   self-adaptive aggregation only
    fedmoco     both modules
    oracle      single node holding the pooled data
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .datagen import ScenarioSpec
from .errors import ConfigError
from .evaluate import FineTuneConfig, ProbeConfig
from .nn import LayerShape, mlp_shapes
from .seeding import seed_for


@dataclass
class DataConfig:
    scenario: str = "equal"
    base_size: int = 10000
    gamma: float = 10.0
    image_size: int = 16
    intensity_offsets: list[float] | None = None
    noise_sigmas: list[float] | None = None
    texture_freqs: list[float] | None = None
    eval_per_class: int = 600
    eval_offset: float = 0.08
    eval_noise: float = 0.15
    eval_texture_freq: float = 1.5


@dataclass
class ExperimentConfig:
    # federation
    nodes: int = 3
    rounds: int = 200
    warmup_rounds: int = 50
    aggregation_mode: str = "self_adaptive"
    metadata_enabled: bool = True
    metadata_timing: str = "post_sync"  # or "post_update"
    eta: float = 0.05
    # intra-node contrastive training
    queue_capacity: int = 1024
    batch_size: int = 64
    momentum_coeff: float = 0.999
    temperature: float = 0.2
    epochs_per_round: int = 1
    lr: float = 0.03
    lr_milestones: list = field(default_factory=lambda: [[120, 0.1], [160, 0.01]])
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    # encoder
    hidden_dims: list = field(default_factory=lambda: [64])
    feature_dim: int = 32
    # distribution metadata
    boxcox_lambda: float = 0.5
    cov_jitter: float = 1e-8
    # aggregation scoring
    probe_size: int = 100
    # data and seeds
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    node_seeds: list | None = None
    # evaluation
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)
    run_probe: bool = True
    run_fine_tune: bool = False
    fine_tune_fraction: float = 0.03

    # -- validation -------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.nodes >= 1, "nodes: must be at least 1"),
            (self.rounds >= 0, "rounds: must be non-negative"),
            (0 <= self.warmup_rounds <= self.rounds, "warmup_rounds: must lie in [0, rounds]"),
            (self.aggregation_mode in ("self_adaptive", "fedavg"),
             f"aggregation_mode: unknown mode '{self.aggregation_mode}'"),
            (self.metadata_timing in ("post_sync", "post_update"),
             f"metadata_timing: unknown timing '{self.metadata_timing}'"),
            (self.eta >= 0, "eta: must be non-negative"),
            (self.queue_capacity >= 0, "queue_capacity: must be non-negative"),
            (self.batch_size >= 1, "batch_size: must be at least 1"),
            (0 <= self.momentum_coeff < 1, "momentum_coeff: must lie in [0, 1)"),
            (self.temperature > 0, "temperature: must be positive"),
            (self.epochs_per_round >= 1, "epochs_per_round: must be at least 1"),
            (self.lr >= 0, "lr: must be non-negative"),
            (0 <= self.sgd_momentum < 1, "sgd_momentum: must lie in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay: must be non-negative"),
            (self.feature_dim >= 2, "feature_dim: must be at least 2"),
            (all(int(h) >= 1 for h in self.hidden_dims), "hidden_dims: entries must be positive"),
            (self.probe_size >= 3, "probe_size: must be at least 3"),
            (self.seed >= 0, "seed: must be non-negative"),
            (0 < self.fine_tune_fraction <= 1, "fine_tune_fraction: must lie in (0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        for pair in self.lr_milestones:
            if len(pair) != 2 or pair[0] < 1 or pair[1] <= 0:
                raise ConfigError(f"lr_milestones: bad entry {pair!r} (want [round, factor])")
        if self.node_seeds is not None:
            if len(self.node_seeds) != self.nodes:
                raise ConfigError(f"node_seeds: expected {self.nodes} entries")
            if any(int(s) < 0 for s in self.node_seeds):
                raise ConfigError("node_seeds: entries must be non-negative")
        spec = self.scenario_spec()  # re-raises scenario field problems
        if min(spec.node_sizes()) < 3:
            raise ConfigError("data.base_size: every node needs at least 3 images")
        return self

    # -- derived objects ---------------------------------------------------

    def scenario_spec(self) -> ScenarioSpec:
        d = self.data
        return ScenarioSpec(
            kind=d.scenario,
            num_nodes=self.nodes,
            base_size=d.base_size,
            gamma=d.gamma,
            image_size=d.image_size,
            intensity_offsets=tuple(d.intensity_offsets) if d.intensity_offsets else None,
            noise_sigmas=tuple(d.noise_sigmas) if d.noise_sigmas else None,
            texture_freqs=tuple(d.texture_freqs) if d.texture_freqs else None,
            eval_per_class=d.eval_per_class,
            eval_offset=d.eval_offset,
            eval_noise=d.eval_noise,
            eval_texture_freq=d.eval_texture_freq,
        )

    def encoder_shapes(self) -> tuple[LayerShape, ...]:
        return mlp_shapes(self.data.image_size ** 2, self.hidden_dims, self.feature_dim)

    def node_seed(self, node_id: int) -> int:
        if self.node_seeds is not None:
            return int(self.node_seeds[node_id])
        return seed_for(self.seed, "node", node_id)

    def lr_at(self, round_index: int) -> float:
        factor = 1.0
        for milestone, f in sorted(tuple(p) for p in self.lr_milestones):
            if round_index >= milestone:
                factor = f
        return self.lr * factor


_NESTED = {"data": DataConfig, "probe": ProbeConfig, "fine_tune": FineTuneConfig}


def _build(dc_cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    known = {f.name for f in fields(dc_cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown field")
        if dc_cls is ExperimentConfig and key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build(_NESTED[key], value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    return dc_cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a (possibly partial) nested mapping; unknown keys
    are reported by their dotted path."""
    return _build(ExperimentConfig, data or {}, "")


def to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    try:
        cfg = from_dict(raw)
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(config), sort_keys=True))


# -- ablation arms ----------------------------------------------------------

ARMS = {
    "fedavg": {"metadata_enabled": False, "aggregation_mode": "fedavg"},
    "fedmoco_m": {"metadata_enabled": True, "aggregation_mode": "fedavg"},
    "fedmoco_s": {"metadata_enabled": False, "aggregation_mode": "self_adaptive"},
    "fedmoco": {"metadata_enabled": True, "aggregation_mode": "self_adaptive"},
    "oracle": {"metadata_enabled": False, "aggregation_mode": "self_adaptive"},
}


def apply_arm(config: ExperimentConfig, arm: str) -> ExperimentConfig:
    """Copy of ``config`` with one arm's module toggles applied.

    The oracle arm pools every node's data into a single centralized node of
    the same total size (the class mix reverts to the full palette).
    """
    if arm not in ARMS:
        raise ConfigError(f"arms: unknown arm '{arm}' (choose from {sorted(ARMS)})")
    cfg = copy.deepcopy(config)
    for key, value in ARMS[arm].items():
        setattr(cfg, key, value)
    if arm == "oracle":
        total = sum(config.scenario_spec().node_sizes())
        cfg.nodes = 1
        cfg.data.scenario = "equal"
        cfg.data.base_size = total
        cfg.data.intensity_offsets = None
        cfg.data.noise_sigmas = None
        cfg.data.texture_freqs = None
        cfg.node_seeds = None
    return cfg.validate()


# -- presets ----------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    overrides: dict
    arms: tuple[str, ...] = ("fedmoco",)
    node_counts: tuple[int, ...] = ()  # empty: keep the overrides' node count


_DESK = {
    "nodes": 3,
    "rounds": 40,
    "warmup_rounds": 10,
    "queue_capacity": 256,
    "batch_size": 32,
    "data": {"base_size": 2000},
}

PRESETS = {
    "desk": Preset(dict(_DESK)),
    "table1-desk": Preset(dict(_DESK), arms=("fedavg", "fedmoco"), node_counts=(3, 6)),
    "ablation-desk": Preset(
        {**_DESK, "data": {"base_size": 800, "scenario": "label_skew"}},
        arms=("fedavg", "fedmoco_m", "fedmoco_s", "fedmoco"),
    ),
    "finetune-desk": Preset(
        # The noisier downstream rendering keeps 3%-label fine-tuning from
        # saturating, so the pretrained-vs-random gap stays measurable.
        {**_DESK, "data": {"base_size": 1200, "eval_noise": 0.55}, "run_fine_tune": True},
    ),
    "smoke": Preset(
        {
            "nodes": 3,
            "rounds": 4,
            "warmup_rounds": 1,
            "queue_capacity": 32,
            "batch_size": 16,
            "probe_size": 16,
            "data": {"base_size": 48, "eval_per_class": 40},
            "probe": {"epochs": 10},
        },
        arms=("fedavg", "fedmoco"),
    ),
}


def preset_config(name: str) -> tuple[ExperimentConfig, Preset]:
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset '{name}' (choose from {sorted(PRESETS)})")
    preset = PRESETS[name]
    cfg = from_dict(copy.deepcopy(preset.overrides))
    cfg.validate()
    return cfg, preset
