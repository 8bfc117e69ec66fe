"""
Causal evaluation of saliency maps.

Deletion masks cells in decreasing saliency order and records how fast the
target score falls (lower AUC is better); insertion starts from a blurred
copy and reveals cells in the same order (higher AUC is better). Fractions
are measured in pixels, so unequal remainder cells are accounted exactly.
"""

from __future__ import annotations

import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from threadpoolctl import threadpool_info

from .classifiers.base import BaseClassifier, CountingClassifier
from .core import NOISE_STREAM, FillMode, apply_mask, auc, composite, derive_seed, gaussian_blur
from .errors import ConfigError, ContractViolation
from .models import GridMask, GridSpec, ImageTensor, SaliencyMap, ScoreCurve
from .storage import save_json

logger = logging.getLogger(__name__)

REPORT_FORMAT = "rexl-report/1"
BENCH_FORMAT = "rexl-bench/1"


@dataclass
class EvalConfig:
    cells_per_step: int = 1
    blur_sigma: float = 10.0
    fill: FillMode = "noise"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cells_per_step < 1:
            raise ConfigError("cells_per_step must be ≥ 1")
        if not self.blur_sigma > 0:
            raise ConfigError("blur_sigma must be > 0")
        if self.fill not in ("noise", "midpoint"):
            raise ConfigError(f"unknown fill {self.fill!r}")

    def header(self) -> Dict[str, Any]:
        """Protocol choices stamped on every report."""
        return {
            "deletion_step_cells": self.cells_per_step,
            "deletion_fill": self.fill,
            "insertion_blur_sigma": self.blur_sigma,
            "seed": self.seed,
        }


def _steps(saliency: SaliencyMap, cells_per_step: int) -> List[np.ndarray]:
    if not saliency.normalized:
        raise ContractViolation("curves need a normalized saliency map")
    order = saliency.ranking()
    return [order[i : i + cells_per_step] for i in range(0, order.size, cells_per_step)]


def _walk(
    classifier: BaseClassifier,
    start: ImageTensor,
    class_index: int,
    saliency: SaliencyMap,
    config: EvalConfig,
    render: Callable[[GridMask], ImageTensor],
) -> ScoreCurve:
    grid = GridSpec.for_image(saliency.k, start)
    total = grid.height * grid.width
    mask = GridMask.empty(grid, derive_seed(config.seed, NOISE_STREAM))
    fractions = [0.0]
    scores = [classifier.score(start)[class_index]]
    touched = 0
    for batch in _steps(saliency, config.cells_per_step):
        mask = mask.with_cells(*batch)
        touched += sum(grid.cell_pixels(c) for c in batch)
        fractions.append(touched / total)
        scores.append(classifier.score(render(mask))[class_index])
    return ScoreCurve(np.asarray(fractions), np.asarray(scores))


def deletion_curve(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    saliency: SaliencyMap,
    config: Optional[EvalConfig] = None,
) -> ScoreCurve:
    """Score after masking the top cells; ties in the map go to the lowest index."""
    config = config or EvalConfig()
    return _walk(
        classifier, image, class_index, saliency, config,
        lambda mask: apply_mask(image, mask, config.fill),
    )


def insertion_curve(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    saliency: SaliencyMap,
    config: Optional[EvalConfig] = None,
) -> ScoreCurve:
    """Score after revealing the top cells of the sharp image over its blur.

    The last point scores the sharp image itself.
    """
    config = config or EvalConfig()
    blurred = gaussian_blur(image, config.blur_sigma)
    return _walk(
        classifier, blurred, class_index, saliency, config,
        lambda mask: composite(blurred, image, mask),
    )


@dataclass(eq=False)
class ImageEvaluation:
    image_id: str
    class_index: int
    deletion: ScoreCurve
    insertion: ScoreCurve
    calls: int
    seconds: float

    @property
    def deletion_auc(self) -> float:
        return auc(self.deletion)

    @property
    def insertion_auc(self) -> float:
        return auc(self.insertion)

    def row(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "class_index": self.class_index,
            "deletion_auc": self.deletion_auc,
            "insertion_auc": self.insertion_auc,
            "calls": self.calls,
            "seconds": self.seconds,
        }


def evaluate_image(
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    saliency: SaliencyMap,
    config: Optional[EvalConfig] = None,
    *,
    image_id: str = "",
    calls: int = 0,
    seconds: float = 0.0,
) -> ImageEvaluation:
    config = config or EvalConfig()
    return ImageEvaluation(
        image_id,
        class_index,
        deletion_curve(classifier, image, class_index, saliency, config),
        insertion_curve(classifier, image, class_index, saliency, config),
        calls,
        seconds,
    )


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


@dataclass(eq=False)
class EvalReport:
    """Per-image AUCs and call counts for one method plus their means."""
    method: str
    config: EvalConfig
    evaluations: List[ImageEvaluation] = field(default_factory=list)
    lam: Optional[float] = None
    config_hash: str = ""
    threads: int = 1

    def __len__(self) -> int:
        return len(self.evaluations)

    @property
    def mean_deletion_auc(self) -> Optional[float]:
        return _mean([e.deletion_auc for e in self.evaluations])

    @property
    def mean_insertion_auc(self) -> Optional[float]:
        return _mean([e.insertion_auc for e in self.evaluations])

    @property
    def mean_calls(self) -> Optional[float]:
        return _mean([e.calls for e in self.evaluations])

    @property
    def mean_seconds(self) -> Optional[float]:
        return _mean([e.seconds for e in self.evaluations])

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "n_images": len(self),
            "deletion_auc": self.mean_deletion_auc,
            "insertion_auc": self.mean_insertion_auc,
            "calls": self.mean_calls,
            "seconds": self.mean_seconds,
        }

    def to_frame(self) -> pd.DataFrame:
        columns = ["image_id", "class_index", "deletion_auc", "insertion_auc", "calls", "seconds"]
        return pd.DataFrame([e.row() for e in self.evaluations], columns=columns)

    def to_dict(self) -> Dict[str, Any]:
        """JSON form without wall-clock seconds; those go through `save_timings`."""
        summary = {k: v for k, v in self.summary().items() if k != "seconds"}
        return {
            "format": REPORT_FORMAT,
            "method": self.method,
            "lambda": self.lam,
            "config": asdict(self.config),
            "protocol": self.config.header(),
            "seed": self.config.seed,
            "config_hash": self.config_hash,
            "threads": self.threads,
            "images": [{k: v for k, v in e.row().items() if k != "seconds"} for e in self.evaluations],
            "summary": summary,
        }

    def save(self, path: Path | str) -> None:
        save_json(path, self.to_dict())

    def save_timings(self, path: Path | str) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame()[["image_id", "calls", "seconds"]].to_csv(p, index=False)
        return p

    def save_curves(self, directory: Path | str) -> List[Path]:
        """One fraction,score CSV per image and curve kind."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for e in self.evaluations:
            for kind, curve in (("deletion", e.deletion), ("insertion", e.insertion)):
                path = d / f"{self.method}_{e.image_id}_{kind}.csv"
                curve.to_frame().to_csv(path, index=False, float_format="%.17g")
                written.append(path)
        return written


@dataclass(frozen=True, eq=False)
class EvalItem:
    image: ImageTensor
    class_index: int
    image_id: str
    classifier: Optional[BaseClassifier] = None


# An explainer takes (classifier, image, class_index) and returns a map.
Explainer = Callable[[BaseClassifier, ImageTensor, int], SaliencyMap]


def _evaluate_one(
    method: Explainer, classifier: BaseClassifier, item: EvalItem, config: EvalConfig
) -> ImageEvaluation:
    classifier = item.classifier or classifier
    counted = CountingClassifier(classifier)
    started = time.perf_counter()
    saliency = method(counted, item.image, item.class_index)
    seconds = time.perf_counter() - started
    return evaluate_image(
        classifier, item.image, item.class_index, saliency, config,
        image_id=item.image_id, calls=counted.calls, seconds=seconds,
    )


def evaluate_method(
    name: str,
    method: Explainer,
    classifier: Optional[BaseClassifier],
    items: Sequence[EvalItem],
    config: Optional[EvalConfig] = None,
    *,
    n_jobs: int = 1,
    lam: Optional[float] = None,
    config_hash: str = "",
) -> EvalReport:
    """Explain and evaluate every item; images run in parallel worker threads."""
    config = config or EvalConfig()
    jobs = (delayed(_evaluate_one)(method, classifier, item, config) for item in items)
    evaluations = list(Parallel(n_jobs=n_jobs, prefer="threads")(jobs)) if items else []
    report = EvalReport(name, config, evaluations, lam, config_hash, n_jobs)
    logger.info(
        "%s: %d images, mean deletion AUC %s", name, len(report),
        "n/a" if report.mean_deletion_auc is None else f"{report.mean_deletion_auc:.4f}",
    )
    return report


def comparison_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    columns = ["method", "n_images", "deletion_auc", "insertion_auc", "calls", "seconds"]
    return pd.DataFrame([r.summary() for r in reports], columns=columns)


def format_table(table: pd.DataFrame) -> str:
    """Aligned plain-text rendering of a comparison or benchmark table."""
    if table.empty:
        return "(no rows)"
    return table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


def environment_descriptor(threads: int) -> Dict[str, Any]:
    """CPU and threading facts recorded next to timings."""
    return {
        "cpu": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "threads": int(threads),
        "blas": [
            {"api": info.get("internal_api"), "num_threads": info.get("num_threads")}
            for info in threadpool_info()
        ],
    }


@dataclass
class MethodTiming:
    method: str
    runs: int
    mean_seconds: Optional[float]
    mean_calls: Optional[float]


@dataclass(eq=False)
class BenchmarkReport:
    timings: List[MethodTiming]
    environment: Dict[str, Any]
    repetitions: int

    def timing(self, method: str) -> MethodTiming:
        for t in self.timings:
            if t.method == method:
                return t
        raise KeyError(method)

    def speedup(self, fast: str, slow: str) -> Optional[float]:
        """Wall-clock ratio slow/fast; None when either was never timed."""
        a, b = self.timing(fast).mean_seconds, self.timing(slow).mean_seconds
        if not a or b is None:
            return None
        return b / a

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(t) for t in self.timings], columns=["method", "runs", "mean_seconds", "mean_calls"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": BENCH_FORMAT,
            "repetitions": self.repetitions,
            "environment": self.environment,
            "methods": [asdict(t) for t in self.timings],
        }

    def save(self, path: Path | str, **extra: Any) -> None:
        obj = self.to_dict()
        obj.update(extra)
        save_json(path, obj)


def benchmark(
    methods: Mapping[str, Explainer],
    classifier: Optional[BaseClassifier],
    items: Sequence[EvalItem],
    repetitions: int = 1,
    *,
    threads: int = 1,
) -> BenchmarkReport:
    """
    Time each method around its explain call only, one method at a time.

    For every image all methods share one instrumented classifier (the
    item's own, else `classifier`); call counts are the per-call
    increments of its counter.
    """
    if repetitions < 1:
        raise ContractViolation("repetitions must be ≥ 1")
    counters = [CountingClassifier(item.classifier or classifier) for item in items]
    timings = []
    for name, method in methods.items():
        seconds: List[float] = []
        calls: List[int] = []
        for _ in range(repetitions):
            for item, counted in zip(items, counters):
                counted.reset()
                started = time.perf_counter()
                method(counted, item.image, item.class_index)
                seconds.append(time.perf_counter() - started)
                calls.append(counted.calls)
        timings.append(MethodTiming(name, len(seconds), _mean(seconds), _mean(calls)))
        logger.info("bench %s: %d runs", name, len(seconds))
    return BenchmarkReport(timings, environment_descriptor(threads), repetitions)
