"""
Run configuration for the command-line surface.

A run config is a JSON object with a required ``"version": 1``. Sections
(``train``, ``rise``, ``eval``, ``tiny``, ``synth``, ``oracle``,
``classifier``) feed the module config dataclasses; command-line flags
override file values. The merged result is written next to every output
as ``effective_config.json`` and hashed into ``config_hash``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .baselines import RiseConfig
from .classifiers import (
    BaseClassifier,
    PlantedOracle,
    SubprocessClassifier,
    SubprocessPool,
    TinyNetClassifier,
    TinyNetConfig,
    load_tiny_params,
)
from .errors import ConfigError
from .metrics import EvalConfig
from .storage import config_hash, load_json, save_json
from .synthetic import SyntheticDatasetSpec, planted_oracle_family
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
# Output locations and worker count stay out of the hash.
HASH_EXCLUDED = ("out", "db", "threads")
EFFECTIVE_CONFIG = "effective_config.json"


def default_threads() -> int:
    value = os.environ.get("REXL_THREADS")
    if value:
        try:
            threads = int(value)
        except ValueError as exc:
            raise ConfigError(f"REXL_THREADS must be an integer, got {value!r}") from exc
        if threads < 1:
            raise ConfigError("REXL_THREADS must be ≥ 1")
        return threads
    return os.cpu_count() or 1


def _build(cls, section: Dict[str, Any], name: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {unknown}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


@dataclass
class ClassifierSpec:
    """Which classifier to explain: planted oracles, the tiny net or a child process."""
    type: str = "oracle"
    weights: Optional[str] = None
    command: Optional[List[str]] = None
    timeout: Optional[float] = None
    pool_size: int = 1

    def __post_init__(self) -> None:
        if self.type not in ("oracle", "tiny", "subprocess"):
            raise ConfigError(f"unknown classifier type {self.type!r}")
        if self.type == "tiny" and not self.weights:
            raise ConfigError("tiny classifier needs a weights path")
        if self.type == "subprocess" and not self.command:
            raise ConfigError("subprocess classifier needs a command")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be ≥ 1")


@dataclass
class OracleSuite:
    """A family of planted oracles used as training or evaluation images."""
    n: int = 20
    n_cells: int = 3
    combine: str = "linear"
    tolerance: float = 0.2
    size: int = 112
    equal_weights: bool = False
    train_seed: int = 0
    eval_seed: int = 1

    def build(self, k: int, held_out: bool) -> List[PlantedOracle]:
        return planted_oracle_family(
            self.n,
            size=self.size,
            k=k,
            n_cells=self.n_cells,
            combine=self.combine,  # type: ignore[arg-type]
            tolerance=self.tolerance,
            seed=self.eval_seed if held_out else self.train_seed,
            equal_weights=self.equal_weights,
        )


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    threads: int = field(default_factory=default_threads)
    k: int = 7
    lam: float = 1.0
    lambdas: List[float] = field(default_factory=list)
    class_index: int = 0
    classifier: Dict[str, Any] = field(default_factory=dict)
    oracle: Dict[str, Any] = field(default_factory=dict)
    synth: Dict[str, Any] = field(default_factory=dict)
    tiny: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    rise: Dict[str, Any] = field(default_factory=dict)
    eval: Dict[str, Any] = field(default_factory=dict)
    scope: str = "CS"
    image_id: Optional[str] = None
    pool: int = 28
    dataset: Optional[str] = None
    weights: Optional[str] = None
    images: List[str] = field(default_factory=list)
    methods: List[str] = field(default_factory=lambda: ["rexl", "rise", "greedy", "random"])
    repetitions: int = 1
    delay: float = 0.0
    limit: Optional[int] = None
    out: str = "runs"
    db: Optional[str] = None

    def __post_init__(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}; expected {CONFIG_VERSION}")
        if self.threads < 1 or self.k < 1 or self.repetitions < 1 or self.pool < 1:
            raise ConfigError("threads, k, pool and repetitions must be positive")
        if not 0.0 <= self.lam <= 1.0 or any(not 0.0 <= x <= 1.0 for x in self.lambdas):
            raise ConfigError("lambda values must lie in [0, 1]")
        if self.scope not in ("DS", "CS", "IS"):
            raise ConfigError(f"unknown scope {self.scope!r}")
        unknown = sorted(set(self.methods) - {"rexl", "rise", "greedy", "random"})
        if unknown:
            raise ConfigError(f"unknown methods {unknown}")
        if self.limit is not None and self.limit < 0:
            raise ConfigError("limit must be ≥ 0")
        if self.delay < 0:
            raise ConfigError("delay must be ≥ 0")
        # Build every section once so bad values fail before any work starts.
        self.classifier_spec()
        self.oracle_suite()
        self.train_config()
        self.rise_config()
        self.eval_config()
        self.tiny_config()
        self.synth_spec()

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("run config must be a JSON object")
        if "version" not in obj:
            raise ConfigError("run config is missing the required 'version' field")
        return _build(cls, obj, "run")

    def _seeded(self, section: Dict[str, Any], with_jobs: bool = False) -> Dict[str, Any]:
        out = {"seed": self.seed, **section}
        if with_jobs:
            out.setdefault("n_jobs", self.threads)
        return out

    def classifier_spec(self) -> ClassifierSpec:
        return _build(ClassifierSpec, self.classifier, "classifier")

    def oracle_suite(self) -> OracleSuite:
        return _build(OracleSuite, self.oracle, "oracle")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self._seeded(self.train, with_jobs=True), "train")

    def rise_config(self) -> RiseConfig:
        section = {"k": self.k, **self._seeded(self.rise, with_jobs=True)}
        return _build(RiseConfig, section, "rise")

    def eval_config(self) -> EvalConfig:
        return _build(EvalConfig, self._seeded(self.eval), "eval")

    def tiny_config(self) -> TinyNetConfig:
        return _build(TinyNetConfig, self.tiny, "tiny")

    def synth_spec(self) -> SyntheticDatasetSpec:
        section = {"k": self.k, **self._seeded(self.synth)}
        return _build(SyntheticDatasetSpec, section, "synth")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def hash(self) -> str:
        obj = {k: v for k, v in self.to_dict().items() if k not in HASH_EXCLUDED}
        return config_hash(obj)


def load_run_config(
    path: Optional[Path | str], defaults: Optional[Dict[str, Any]] = None, **overrides: Any
) -> RunConfig:
    """Read a config file (optional) and apply non-None overrides.

    `defaults` fill keys that neither the file nor the overrides set.
    """
    obj: Dict[str, Any] = {"version": CONFIG_VERSION}
    if path is not None:
        loaded = load_json(path)
        if loaded is None:
            raise ConfigError(f"config file not found: {path}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
        obj = loaded
    obj = {**(defaults or {}), **obj}
    obj.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig.from_dict(obj)


def write_effective_config(config: RunConfig, out_dir: Path | str) -> Path:
    path = Path(out_dir) / EFFECTIVE_CONFIG
    save_json(path, {**config.to_dict(), "config_hash": config.hash})
    return path


def require_paths(config: RunConfig, *names: str) -> None:
    """Fail fast when a referenced input path is missing."""
    for name in names:
        value = getattr(config, name)
        values = value if isinstance(value, list) else [value]
        if not values or any(v is None for v in values):
            raise ConfigError(f"'{name}' is required for this command")
        for v in values:
            if not Path(v).exists():
                raise ConfigError(f"{name} path does not exist: {v}")


def build_classifier(spec: ClassifierSpec) -> BaseClassifier:
    """Instantiate a tiny-net or subprocess classifier; oracles are built per image."""
    if spec.type == "tiny":
        return TinyNetClassifier(load_tiny_params(spec.weights))  # type: ignore[arg-type]
    if spec.type == "subprocess":
        if spec.pool_size > 1:
            return SubprocessPool(spec.command, spec.pool_size, spec.timeout)  # type: ignore[arg-type]
        return SubprocessClassifier(spec.command, timeout=spec.timeout)  # type: ignore[arg-type]
    raise ConfigError("planted oracles are built from the [oracle] section, not as one classifier")
