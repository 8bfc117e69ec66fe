"""Shared pytest setup: puts src/ on the path and gates slow acceptance runs."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from rexl.classifiers import checker_reference, make_oracle  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance check (set REXL_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("REXL_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set REXL_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def checker_28():
    """28×28 single-channel checkerboard, 4×4-pixel cells on a 7×7 grid."""
    return checker_reference(28)


@pytest.fixture
def linear_oracle(checker_28):
    """Linear planted oracle with three salient cells of unequal weight."""
    return make_oracle(
        [(10, 0.5), (24, 0.3), (40, 0.2)], size=28, tolerance=0.1, reference=checker_28
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
