"""
Planted oracles: synthetic classifiers with analytically known saliency.

An oracle holds a reference image and a set of salient cells with weights.
Each salient cell is scored by how intact it is relative to the reference,
and the target-class score combines those intactness values:

- linear:          Σ w_b · intact_b
- multiplicative:  Π intact_b
- redundant:       1 − Π (1 − intact_b)   (evidence survives until every
                   salient cell is destroyed)

All other classes score 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..core import cell_means
from ..errors import ContractViolation
from ..models import ClassScores, GridSpec, ImageTensor
from .base import BaseClassifier


CombineMode = Literal["linear", "multiplicative", "redundant"]


@dataclass
class PlantedOracleConfig:
    reference_image: ImageTensor
    salient_cells: List[Tuple[int, float]]
    combine: CombineMode = "linear"
    tolerance: float = 0.25
    target_class: int = 0
    k: int = 7
    num_classes: int = 1

    def __post_init__(self) -> None:
        self.salient_cells = [(int(c), float(w)) for c, w in self.salient_cells]
        if not self.salient_cells:
            raise ContractViolation("a planted oracle needs at least one salient cell")
        if self.combine not in ("linear", "multiplicative", "redundant"):
            raise ContractViolation(f"unknown combine mode {self.combine!r}")
        if not self.tolerance > 0:
            raise ContractViolation("tolerance d0 must be > 0")
        if not 0 <= self.target_class < self.num_classes:
            raise ContractViolation("target class outside the class range")
        grid = self.grid
        cells = [grid.check_cell(c) for c, _ in self.salient_cells]
        if len(set(cells)) != len(cells):
            raise ContractViolation("salient cells must be distinct")
        weights = np.array([w for _, w in self.salient_cells])
        if np.any(weights < 0):
            raise ContractViolation("salient weights must be ≥ 0")
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ContractViolation(f"salient weights sum to {float(weights.sum())}, not 1")

    @property
    def grid(self) -> GridSpec:
        return GridSpec.for_image(self.k, self.reference_image)

    @property
    def cells(self) -> np.ndarray:
        return np.array([c for c, _ in self.salient_cells], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.salient_cells], dtype=np.float64)

    def weight_map(self) -> np.ndarray:
        """Planted weights as a k×k array."""
        out = np.zeros(self.k * self.k)
        out[self.cells] = self.weights
        return out.reshape(self.k, self.k)

    def ranked_cells(self) -> List[int]:
        """Salient cells by descending weight, ties to the lowest index."""
        order = sorted(self.salient_cells, key=lambda cw: (-cw[1], cw[0]))
        return [c for c, _ in order]


def intactness_grid(
    config: PlantedOracleConfig, image: ImageTensor, grid: Optional[GridSpec] = None
) -> np.ndarray:
    """Intactness of every cell as a k×k array."""
    ref = config.reference_image
    if image.shape != ref.shape:
        raise ContractViolation("image and reference differ in shape")
    diff = cell_means(np.abs(image.data - ref.data), grid or config.grid)
    return np.maximum(0.0, 1.0 - diff / config.tolerance)


def oracle_intactness(config: PlantedOracleConfig, image: ImageTensor, cell: int) -> float:
    """max(0, 1 − meanAbsDiff(cell vs reference) / d0)."""
    grid = config.grid
    rows, cols = grid.cell_slice(cell)
    ref = config.reference_image
    if image.shape != ref.shape:
        raise ContractViolation("image and reference differ in shape")
    diff = float(np.mean(np.abs(image.data[rows, cols] - ref.data[rows, cols])))
    return max(0.0, 1.0 - diff / config.tolerance)


class PlantedOracle(BaseClassifier):
    kind = "multilabel"

    def __init__(self, config: PlantedOracleConfig):
        self.config = config
        self.num_classes = config.num_classes
        self.input_shape = config.reference_image.shape
        self._cells = config.cells
        self._weights = config.weights
        self._grid = config.grid

    def target_score(self, image: ImageTensor) -> float:
        intact = intactness_grid(self.config, image, self._grid).reshape(-1)[self._cells]
        mode = self.config.combine
        if mode == "linear":
            value = float(np.dot(self._weights, intact))
        elif mode == "multiplicative":
            value = float(np.prod(intact))
        else:
            value = float(1.0 - np.prod(1.0 - intact))
        return min(1.0, max(0.0, value))

    def _score(self, image: ImageTensor) -> ClassScores:
        scores = np.zeros(self.num_classes)
        scores[self.config.target_class] = self.target_score(image)
        return ClassScores(scores, "multilabel")


def checker_reference(size: int, channels: int = 1, block: int = 2) -> ImageTensor:
    """A 0/1 checkerboard; uniform noise lands ≈0.5 away from it on average."""
    yy, xx = np.mgrid[0:size, 0:size]
    board = (((yy // block) + (xx // block)) % 2).astype(np.float64)
    return ImageTensor(np.repeat(board[:, :, None], channels, axis=2), (0.0, 1.0))


def make_oracle(
    salient_cells: Sequence[Tuple[int, float]],
    *,
    size: int = 112,
    k: int = 7,
    combine: CombineMode = "linear",
    tolerance: float = 0.25,
    reference: Optional[ImageTensor] = None,
    num_classes: int = 1,
    target_class: int = 0,
) -> PlantedOracle:
    """Convenience constructor over a checkerboard reference."""
    ref = reference if reference is not None else checker_reference(size)
    config = PlantedOracleConfig(
        reference_image=ref,
        salient_cells=list(salient_cells),
        combine=combine,
        tolerance=tolerance,
        target_class=target_class,
        k=k,
        num_classes=num_classes,
    )
    return PlantedOracle(config)
