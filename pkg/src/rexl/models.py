"""
Value types passed between rexl modules.

Images, grids and masks, classifier scores, deletion traces and saliency
maps. Arrays are copied on construction and kept read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ContractViolation, ScoreValidationError


ScoreKind = Literal["softmax", "multilabel"]


def _frozen_copy(values: Any, dtype: Any = np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """
    An H×W×C image with a declared value range.

    The pixel array is copied on construction and made read-only, so an
    ImageTensor can be shared between threads and never changes under a
    caller. 2-D input is treated as a single channel.
    """
    data: np.ndarray
    value_range: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ContractViolation(f"image must be H×W×C with H, W, C ≥ 1, got shape {arr.shape}")
        lo, hi = (float(v) for v in self.value_range)
        if not lo < hi:
            raise ContractViolation(f"value_range must satisfy lo < hi, got {(lo, hi)}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("image contains non-finite values")
        if arr.min() < lo or arr.max() > hi:
            raise ContractViolation(
                f"pixel values [{arr.min()}, {arr.max()}] outside value_range {(lo, hi)}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "value_range", (lo, hi))

    @classmethod
    def from_flat(
        cls,
        height: int,
        width: int,
        channels: int,
        values: Sequence[float],
        value_range: Tuple[float, float] = (0.0, 1.0),
    ) -> "ImageTensor":
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != height * width * channels:
            raise ContractViolation(
                f"expected {height * width * channels} values, got {flat.size}"
            )
        return cls(flat.reshape(height, width, channels), value_range)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def midpoint(self) -> float:
        lo, hi = self.value_range
        return 0.5 * (lo + hi)

    def with_data(self, data: np.ndarray) -> "ImageTensor":
        """New image over the same value range."""
        return ImageTensor(data, self.value_range)

    def normalized(self) -> np.ndarray:
        """Pixels rescaled to [0, 1]."""
        lo, hi = self.value_range
        return (self.data - lo) / (hi - lo)

    def equals(self, other: "ImageTensor") -> bool:
        return self.value_range == other.value_range and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class GridSpec:
    """
    A k×k partition of an H×W image into rectangular cells.

    Cells are numbered row-major (index = row * k + col). When H or W is
    not divisible by k, the last row/column of cells absorbs the remainder.
    """
    k: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractViolation(f"grid k must be ≥ 1, got {self.k}")
        if self.height < self.k or self.width < self.k:
            raise ContractViolation(
                f"a {self.k}×{self.k} grid needs an image of at least {self.k}×{self.k} "
                f"pixels, got {self.height}×{self.width}"
            )

    @classmethod
    def for_image(cls, k: int, image: ImageTensor) -> "GridSpec":
        return cls(k, image.height, image.width)

    @staticmethod
    def _edges(n: int, k: int) -> np.ndarray:
        base = n // k
        edges = np.arange(k + 1, dtype=np.int64) * base
        edges[-1] = n
        return edges

    @cached_property
    def row_edges(self) -> np.ndarray:
        return self._edges(self.height, self.k)

    @cached_property
    def col_edges(self) -> np.ndarray:
        return self._edges(self.width, self.k)

    @cached_property
    def row_sizes(self) -> np.ndarray:
        return np.diff(self.row_edges)

    @cached_property
    def col_sizes(self) -> np.ndarray:
        return np.diff(self.col_edges)

    @property
    def n_cells(self) -> int:
        return self.k * self.k

    @property
    def cell_size(self) -> Tuple[int, int]:
        """Nominal (height, width) of an interior cell in pixels."""
        return (self.height // self.k, self.width // self.k)

    @cached_property
    def cell_bounds(self) -> List[Tuple[int, int, int, int]]:
        """Per-cell pixel rectangles as (top, bottom, left, right), half-open."""
        bounds = []
        for r in range(self.k):
            for c in range(self.k):
                bounds.append(
                    (
                        int(self.row_edges[r]),
                        int(self.row_edges[r + 1]),
                        int(self.col_edges[c]),
                        int(self.col_edges[c + 1]),
                    )
                )
        return bounds

    def check_cell(self, index: int) -> int:
        if not 0 <= int(index) < self.n_cells:
            raise ContractViolation(f"cell {index} outside a {self.k}×{self.k} grid")
        return int(index)

    def cell_slice(self, index: int) -> Tuple[slice, slice]:
        top, bottom, left, right = self.cell_bounds[self.check_cell(index)]
        return slice(top, bottom), slice(left, right)

    def cell_pixels(self, index: int) -> int:
        top, bottom, left, right = self.cell_bounds[self.check_cell(index)]
        return (bottom - top) * (right - left)

    def matches(self, image: ImageTensor) -> bool:
        return self.height == image.height and self.width == image.width

    def expand(self, cell_values: np.ndarray) -> np.ndarray:
        """Broadcast a k×k array to pixel resolution (H×W)."""
        values = np.asarray(cell_values)
        if values.shape != (self.k, self.k):
            raise ContractViolation(f"expected a {self.k}×{self.k} array, got {values.shape}")
        return np.repeat(np.repeat(values, self.row_sizes, axis=0), self.col_sizes, axis=1)


@dataclass(frozen=True, eq=False)
class GridMask:
    """Occupancy over grid cells (True = masked) plus the episode noise seed."""
    grid: GridSpec
    occupied: np.ndarray
    noise_seed: int = 0

    def __post_init__(self) -> None:
        occ = _frozen_copy(self.occupied, dtype=bool)
        if occ.shape != (self.grid.k, self.grid.k):
            raise ContractViolation(
                f"occupancy must be {self.grid.k}×{self.grid.k}, got {occ.shape}"
            )
        if not 0 <= int(self.noise_seed) < 2**64:
            raise ContractViolation("noise_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "noise_seed", int(self.noise_seed))

    @classmethod
    def empty(cls, grid: GridSpec, noise_seed: int = 0) -> "GridMask":
        return cls(grid, np.zeros((grid.k, grid.k), dtype=bool), noise_seed)

    @classmethod
    def from_cells(cls, grid: GridSpec, cells: Sequence[int], noise_seed: int = 0) -> "GridMask":
        return cls.empty(grid, noise_seed).with_cells(*cells)

    def with_cells(self, *cells: int) -> "GridMask":
        occ = np.array(self.occupied, copy=True)
        flat = occ.reshape(-1)
        for cell in cells:
            flat[self.grid.check_cell(cell)] = True
        return GridMask(self.grid, occ, self.noise_seed)

    def is_occupied(self, cell: int) -> bool:
        return bool(self.occupied.reshape(-1)[self.grid.check_cell(cell)])

    @property
    def count(self) -> int:
        return int(self.occupied.sum())

    def pixel_mask(self) -> np.ndarray:
        """H×W boolean field of masked pixels."""
        return self.grid.expand(self.occupied)


@dataclass(frozen=True, eq=False)
class ScoreCurve:
    """Score as a function of the fraction of the image perturbed."""
    fractions: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        fr = _frozen_copy(self.fractions)
        sc = _frozen_copy(self.scores)
        if fr.ndim != 1 or sc.ndim != 1 or fr.shape != sc.shape:
            raise ContractViolation("fractions and scores must be 1-D arrays of equal length")
        if fr.size < 2:
            raise ContractViolation("a score curve needs at least 2 points")
        if fr[0] != 0.0 or fr[-1] != 1.0:
            raise ContractViolation("fractions must start at 0 and end at 1")
        if np.any(np.diff(fr) <= 0):
            raise ContractViolation("fractions must be strictly ascending")
        if np.any(sc < 0.0) or np.any(sc > 1.0):
            raise ContractViolation("scores must lie in [0, 1]")
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "scores", sc)

    def __len__(self) -> int:
        return int(self.fractions.size)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fraction": self.fractions, "score": self.scores})


@dataclass(frozen=True, eq=False)
class ClassScores:
    """Per-class scores in [0, 1]; softmax scores also sum to 1."""
    scores: np.ndarray
    kind: ScoreKind = "softmax"

    def __post_init__(self) -> None:
        try:
            sc = _frozen_copy(self.scores)
        except (TypeError, ValueError) as exc:
            raise ScoreValidationError(f"scores are not numeric: {exc}") from exc
        if sc.ndim != 1 or sc.size < 1:
            raise ScoreValidationError(f"scores must be a non-empty vector, got shape {sc.shape}")
        if self.kind not in ("softmax", "multilabel"):
            raise ScoreValidationError(f"unknown score kind {self.kind!r}")
        if not np.all(np.isfinite(sc)):
            raise ScoreValidationError("scores contain non-finite values")
        if np.any(sc < 0.0) or np.any(sc > 1.0):
            raise ScoreValidationError(f"scores outside [0, 1]: {sc.tolist()}")
        if self.kind == "softmax" and abs(float(sc.sum()) - 1.0) > 1e-6:
            raise ScoreValidationError(f"softmax scores sum to {float(sc.sum())}, not 1")
        object.__setattr__(self, "scores", sc)

    def __len__(self) -> int:
        return int(self.scores.size)

    def __getitem__(self, class_index: int) -> float:
        return float(self.scores[class_index])


@dataclass(frozen=True, eq=False)
class DeletionTrace:
    """
    Ordered cell deletions from one rollout with the score after each.

    `scores[t]` is p^(t+1); `deltas[t] = p^(t) - p^(t+1)`, so the deltas
    telescope to `initial_score - final_score`. Cells may repeat.
    """
    cells: np.ndarray
    deltas: np.ndarray
    scores: np.ndarray
    initial_score: float
    k: int

    def __post_init__(self) -> None:
        cells = _frozen_copy(self.cells, dtype=np.int64)
        deltas = _frozen_copy(self.deltas)
        scores = _frozen_copy(self.scores)
        if not (cells.ndim == deltas.ndim == scores.ndim == 1):
            raise ContractViolation("trace arrays must be 1-D")
        if not (cells.size == deltas.size == scores.size):
            raise ContractViolation("trace arrays must have equal length")
        if cells.size > self.k * self.k:
            raise ContractViolation(f"trace longer than {self.k * self.k} steps")
        if cells.size and (cells.min() < 0 or cells.max() >= self.k * self.k):
            raise ContractViolation("trace cell outside the grid")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "initial_score", float(self.initial_score))

    @classmethod
    def from_scores(cls, cells: Sequence[int], scores: Sequence[float], k: int) -> "DeletionTrace":
        """Build a trace from p^(0..T); `scores` has one more entry than `cells`."""
        s = np.asarray(scores, dtype=np.float64)
        if s.size != len(cells) + 1:
            raise ContractViolation("scores must include the initial score")
        return cls(np.asarray(cells, dtype=np.int64), s[:-1] - s[1:], s[1:], float(s[0]), k)

    def __len__(self) -> int:
        return int(self.cells.size)

    @property
    def final_score(self) -> float:
        return float(self.scores[-1]) if self.scores.size else self.initial_score

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(1, len(self) + 1),
                "cell": self.cells,
                "delta": self.deltas,
                "score": self.scores,
            }
        )


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Nonnegative k×k cell weights, normally summing to 1."""
    weights: np.ndarray
    lam: float = 1.0
    normalized: bool = True
    degenerate: bool = False
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        w = _frozen_copy(self.weights)
        if w.ndim == 1:
            side = int(round(np.sqrt(w.size)))
            if side * side != w.size:
                raise ContractViolation(f"{w.size} weights do not form a square grid")
            w = _frozen_copy(w.reshape(side, side))
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ContractViolation(f"saliency weights must be k×k, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ContractViolation("saliency weights must be finite and nonnegative")
        if not 0.0 <= float(self.lam) <= 1.0:
            raise ContractViolation(f"lambda must lie in [0, 1], got {self.lam}")
        if self.normalized and w.sum() > 0 and abs(float(w.sum()) - 1.0) > 1e-9:
            raise ContractViolation(f"normalized map sums to {float(w.sum())}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    @property
    def flat(self) -> np.ndarray:
        return self.weights.reshape(-1)

    def ranking(self) -> np.ndarray:
        """Cell indices by descending weight; ties go to the lowest index."""
        return np.argsort(-self.flat, kind="stable")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "format": "rexl-map/1",
            "k": self.k,
            "lambda": self.lam,
            "weights": [float(x) for x in self.flat],
            "degenerate": bool(self.degenerate),
            "resolution": "grid",
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "SaliencyMap":
        k = int(obj["k"])
        weights = np.asarray(obj["weights"], dtype=np.float64).reshape(k, k)
        extra = {
            key: value
            for key, value in obj.items()
            if key not in ("format", "k", "lambda", "weights", "degenerate", "resolution")
        }
        return cls(weights, float(obj.get("lambda", 1.0)), True, bool(obj.get("degenerate", False)), extra)
