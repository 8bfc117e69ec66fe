"""
Reference explainers: randomized masking (RISE-style), exhaustive greedy
deletion and random saliency.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from .classifiers.base import BaseClassifier, CountingClassifier
from .core import (
    NOISE_STREAM,
    RANDOM_MAP_STREAM,
    RISE_STREAM,
    apply_mask,
    bilinear_upsample,
    cell_means,
    derive_seed,
    make_rng,
)
from .errors import ConfigError, ContractViolation
from .models import DeletionTrace, GridMask, GridSpec, ImageTensor, SaliencyMap
from .saliency import Explanation, accumulate_credit, normalize_map
from .storage import save_json

logger = logging.getLogger(__name__)


@dataclass
class RiseConfig:
    n_masks: int = 4000
    keep_prob: float = 0.5
    k: int = 7
    shift: bool = True
    seed: int = 0
    batch_size: int = 100
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_masks < 1:
            raise ConfigError("n_masks must be ≥ 1")
        if not 0.0 < self.keep_prob < 1.0:
            raise ConfigError("keep_prob must lie in (0, 1)")
        if self.k < 1 or self.batch_size < 1 or self.n_jobs < 1:
            raise ConfigError("k, batch_size and n_jobs must be positive")


@dataclass(eq=False)
class PixelSaliency:
    """Pixel-resolution saliency field with the number of classifier calls spent."""
    field: np.ndarray
    calls: int
    n_masks: int


def _rise_batch(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    config: RiseConfig,
    batch_index: int,
    keep: Optional[np.ndarray],
) -> np.ndarray:
    h, w = image.height, image.width
    start = batch_index * config.batch_size
    count = min(config.batch_size, config.n_masks - start)
    rng = make_rng(config.seed, RISE_STREAM, batch_index)
    if keep is None:
        grids = (rng.random((count, config.k, config.k)) < config.keep_prob).astype(np.float64)
    else:
        grids = keep[start : start + count].astype(np.float64)
    cell_h, cell_w = h / config.k, w / config.k
    mid = image.midpoint
    acc = np.zeros((h, w))
    for grid in grids:
        shift = (rng.uniform(0.0, cell_w), rng.uniform(0.0, cell_h)) if config.shift else (0.0, 0.0)
        m = bilinear_upsample(grid, h, w, shift)
        masked = image.with_data(mid + m[:, :, None] * (image.data - mid))
        acc += classifier.score(masked)[class_index] * m
    return acc


def rise_saliency(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    config: Optional[RiseConfig] = None,
    keep: Optional[np.ndarray] = None,
) -> PixelSaliency:
    """
    saliency(x) = Σ_i score_i · mask_i(x) / (N · p).

    Masks are k×k Bernoulli(p) keep-grids upsampled bilinearly (with a
    random sub-cell shift when enabled); masked-out regions fade towards the
    value-range midpoint. Batches are reduced in index order, so the result
    does not depend on `n_jobs`. `keep` supplies explicit N×k×k keep-grids.
    """
    config = config or RiseConfig()
    if keep is not None:
        keep = np.asarray(keep)
        if keep.shape != (config.n_masks, config.k, config.k):
            raise ContractViolation(f"keep grids must have shape {(config.n_masks, config.k, config.k)}")
    counted = CountingClassifier(classifier)
    n_batches = math.ceil(config.n_masks / config.batch_size)
    jobs = (
        delayed(_rise_batch)(counted, image, class_index, config, b, keep) for b in range(n_batches)
    )
    partials = Parallel(n_jobs=config.n_jobs, prefer="threads")(jobs)
    field = np.zeros((image.height, image.width))
    for part in partials:
        field += part
    field /= config.n_masks * config.keep_prob
    logger.debug("RISE: %d masks, %d classifier calls", config.n_masks, counted.calls)
    return PixelSaliency(field, counted.calls, config.n_masks)


def greedy_saliency(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    budget: Optional[int] = None,
    lam: float = 1.0,
    *,
    k: int = 7,
    seed: int = 0,
) -> Explanation:
    """
    One-step-lookahead exhaustive deletion.

    At every step each unmasked cell is tried and the one with the largest
    score drop is masked (ties to the lowest index). Uses Σ_t (k² − t + 1) + 1
    classifier calls.
    """
    grid = GridSpec.for_image(k, image)
    budget = grid.n_cells if budget is None else int(budget)
    if not 0 <= budget <= grid.n_cells:
        raise ContractViolation(f"budget must lie in [0, {grid.n_cells}]")
    counted = CountingClassifier(classifier)
    mask = GridMask.empty(grid, derive_seed(seed, NOISE_STREAM))
    scores = [counted.score(image)[class_index]]
    cells: List[int] = []
    for _ in range(budget):
        best_cell, best_score = -1, math.inf
        for cell in range(grid.n_cells):
            if mask.is_occupied(cell):
                continue
            s = counted.score(apply_mask(image, mask.with_cells(cell)))[class_index]
            if s < best_score:
                best_cell, best_score = cell, s
        mask = mask.with_cells(best_cell)
        cells.append(best_cell)
        scores.append(best_score)
    trace = DeletionTrace.from_scores(cells, scores, k)
    logger.debug("greedy deletion: %d steps, %d classifier calls", budget, counted.calls)
    return Explanation(normalize_map(accumulate_credit(trace, lam), lam), trace, counted.calls)


def random_saliency(rng: np.random.Generator | int, k: int = 7) -> SaliencyMap:
    """A uniformly random ranking of cells as strictly decreasing weights."""
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(int(rng), RANDOM_MAP_STREAM)
    n = k * k
    order = rng.permutation(n)
    weights = np.empty(n)
    weights[order] = np.arange(n, 0, -1, dtype=np.float64)
    return normalize_map(weights.reshape(k, k))


def greedy_call_count(k: int, budget: int) -> int:
    n = k * k
    return sum(n - t + 1 for t in range(1, budget + 1)) + 1


def pooled_map(pixel: PixelSaliency, k: int) -> SaliencyMap:
    """Mean of the pixel field over each grid cell, normalized."""
    grid = GridSpec(k, pixel.field.shape[0], pixel.field.shape[1])
    return normalize_map(cell_means(pixel.field, grid))


def export_pixel_map(
    path: Path | str, pixel: PixelSaliency, *, seed: int, config_hash: str, **extra: Any
) -> Dict[str, Any]:
    h, w = pixel.field.shape
    obj: Dict[str, Any] = {
        "format": "rexl-map/1",
        "resolution": "pixel",
        "height": int(h),
        "width": int(w),
        "weights": [float(x) for x in pixel.field.reshape(-1)],
        "calls": int(pixel.calls),
        "seed": int(seed),
        "config_hash": config_hash,
    }
    obj.update(extra)
    save_json(path, obj)
    return obj
