"""Classifier backends behind the black-box `score` boundary."""

from pathlib import Path

from .base import BaseClassifier, ConstantClassifier, CountingClassifier, SlowClassifier
from .oracle import (
    PlantedOracle,
    PlantedOracleConfig,
    checker_reference,
    intactness_grid,
    make_oracle,
    oracle_intactness,
)
from .subprocess_adapter import SubprocessClassifier, SubprocessPool
from .tiny_net import (
    TinyNetClassifier,
    TinyNetConfig,
    TinyNetParams,
    load_tiny_params,
    save_tiny_params,
    train_tiny_classifier,
)

STUB_SERVER = Path(__file__).with_name("stub_server.py")

__all__ = [
    "BaseClassifier",
    "ConstantClassifier",
    "CountingClassifier",
    "SlowClassifier",
    "PlantedOracle",
    "PlantedOracleConfig",
    "checker_reference",
    "intactness_grid",
    "make_oracle",
    "oracle_intactness",
    "SubprocessClassifier",
    "SubprocessPool",
    "TinyNetClassifier",
    "TinyNetConfig",
    "TinyNetParams",
    "load_tiny_params",
    "save_tiny_params",
    "train_tiny_classifier",
    "STUB_SERVER",
]
