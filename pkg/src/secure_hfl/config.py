"""Experiment configuration: nested dataclasses loaded from a TOML file.

Every field has a default, so an empty file is a valid configuration of the
reference scenario (25 vehicles, 100 m range, 20% attackers, one-hop
clusters, 75% selection, unblock time 5, equal score weights).
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from typing import Optional

from .adversary import AttackKind, AttackPolicy
from .baselines import CosDefenseConfig
from .errors import ConfigurationError
from .security import SecurityConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOPOLOGIES = ("cbhfl", "none")
DEFENSES = ("proposed", "cosdefense", "none")

# named comparison arms: (topology, defense, attacked)
ARMS = {
    "cosdefense": ("none", "cosdefense", True),
    "noclustering+proposed": ("none", "proposed", True),
    "cbhfl+proposed": ("cbhfl", "proposed", True),
    "cbhfl+noattack": ("cbhfl", "proposed", False),
}
ARM_ORDER = tuple(ARMS)


@dataclass
class DataConfig:
    n_classes: int = 10
    n_features: int = 20
    n_samples: int = 3000
    class_separation: float = 3.0
    shards_per_client: int = 2
    path: Optional[str] = None  # optional delimited file, label in last column


@dataclass
class ModelConfig:
    hidden: int = 16
    init_scale: float = 0.1


@dataclass
class TrainingConfig:
    lr: float = 0.05
    epochs: int = 2
    batch_size: int = 10
    weighting: str = "samples"  # or "uniform"


@dataclass
class MobilityConfig:
    n_vehicles: int = 25
    arrival_rate: float = 2.5
    track_length: float = 1000.0
    comm_range: float = 100.0
    jitter_std: float = 0.5
    dt: float = 1.0
    alpha: float = 0.5
    departure_prob: float = 0.0  # per vehicle per round; departures never free arrival slots


@dataclass
class AdversaryConfig:
    attacker_fraction: float = 0.2
    unreliable_fraction: float = 0.12
    drop_prob: float = 0.2
    overlap: bool = False


@dataclass
class AttackConfig:
    enabled: bool = True
    kind: str = "continuous"
    start_round: int = 10
    mean: float = 2.0
    var: float = 0.3

    def policy(self) -> Optional[AttackPolicy]:
        if not self.enabled:
            return None
        try:
            kind = AttackKind(self.kind)
        except ValueError:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}", field="attack.kind")
        return AttackPolicy(kind, self.start_round, self.mean, self.var)


@dataclass
class RunConfig:
    seed: int = 0
    max_rounds: int = 60
    epsilons: list = field(default_factory=lambda: [0.1, 0.01])
    epc_period: int = 1
    epc_reference: str = "global"  # or "record"
    verbose: bool = False


@dataclass
class GridConfig:
    means: list = field(default_factory=lambda: [0.0, 1.0, 2.0])
    vars: list = field(default_factory=lambda: [0.1, 0.2, 0.3])
    arms: list = field(default_factory=lambda: list(ARM_ORDER))


@dataclass
class ExperimentConfig:
    topology: str = "cbhfl"
    defense: str = "proposed"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    security: SecurityConfig = field(default_factory=SecurityConfig)
    cosdefense: CosDefenseConfig = field(default_factory=CosDefenseConfig)
    run: RunConfig = field(default_factory=RunConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    def validate(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"expected one of {TOPOLOGIES}", field="topology")
        if self.defense not in DEFENSES:
            raise ConfigurationError(f"expected one of {DEFENSES}", field="defense")
        if self.run.max_rounds < 3:
            raise ConfigurationError("must be >= 3", field="run.max_rounds")
        if not self.run.epsilons or any(not e > 0 for e in self.run.epsilons):
            raise ConfigurationError("every epsilon must be > 0", field="run.epsilons")
        if self.run.epc_period < 1:
            raise ConfigurationError("must be >= 1", field="run.epc_period")
        if self.run.epc_reference not in ("global", "record"):
            raise ConfigurationError("expected 'global' or 'record'", field="run.epc_reference")
        if self.training.lr < 0:
            raise ConfigurationError("must be >= 0", field="training.lr")
        if self.training.epochs < 1 or self.training.batch_size < 1:
            raise ConfigurationError("must be >= 1", field="training.epochs")
        if self.training.weighting not in ("samples", "uniform"):
            raise ConfigurationError("expected 'samples' or 'uniform'", field="training.weighting")
        if self.mobility.n_vehicles < 1:
            raise ConfigurationError("must be >= 1", field="mobility.n_vehicles")
        if self.mobility.arrival_rate < 0:
            raise ConfigurationError("must be >= 0", field="mobility.arrival_rate")
        if not self.mobility.comm_range > 0:
            raise ConfigurationError("must be > 0", field="mobility.comm_range")
        if not self.mobility.track_length > 0:
            raise ConfigurationError("must be > 0", field="mobility.track_length")
        if not 0 <= self.mobility.departure_prob <= 1:
            raise ConfigurationError("must lie in [0, 1]", field="mobility.departure_prob")
        if not 0 <= self.mobility.alpha <= 1:
            raise ConfigurationError("must lie in [0, 1]", field="mobility.alpha")
        for arm in self.grid.arms:
            if arm not in ARMS:
                raise ConfigurationError(f"unknown arm {arm!r}", field="grid.arms")
        self.attack.policy()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_arm(self, arm, mean=None, var=None) -> "ExperimentConfig":
        topology, defense, attacked = ARMS[arm]
        attack = dataclasses.replace(
            self.attack,
            enabled=attacked and self.attack.enabled,
            mean=self.attack.mean if mean is None else float(mean),
            var=self.attack.var if var is None else float(var),
        )
        return dataclasses.replace(self, topology=topology, defense=defense, attack=attack)


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "mobility": MobilityConfig,
    "adversary": AdversaryConfig,
    "attack": AttackConfig,
    "security": SecurityConfig,
    "cosdefense": CosDefenseConfig,
    "run": RunConfig,
    "grid": GridConfig,
}


def _build(cls, section, values):
    if not isinstance(values, dict):
        raise ConfigurationError("expected a table", field=section)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigurationError("unknown key", field=f"{section}.{key}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc), field=section) from exc


def from_dict(raw) -> ExperimentConfig:
    raw = dict(raw)
    kwargs = {}
    for key in ("topology", "defense"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    for section, cls in _SECTIONS.items():
        if section in raw:
            kwargs[section] = _build(cls, section, raw.pop(section))
    if raw:
        raise ConfigurationError("unknown key", field=sorted(raw)[0])
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return from_dict(raw)
