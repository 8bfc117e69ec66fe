"""
Synthetic data: a small shapes dataset and families of planted oracles.

Shapes are drawn around the image centre and span only a few grid cells,
so the evidence for each class is spatially compact and a saliency map
can be checked by eye.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from .classifiers.oracle import CombineMode, PlantedOracle, PlantedOracleConfig
from .core import SYNTH_STREAM, make_rng
from .errors import ConfigError
from .image_io import load_image, save_image
from .models import GridSpec, ImageTensor
from .storage import load_versioned, save_json

logger = logging.getLogger(__name__)

DATASET_FORMAT = "rexl-dataset/1"
SHAPES = ("square", "cross", "stripe", "blob")


@dataclass
class SyntheticDatasetSpec:
    classes: Tuple[str, ...] = SHAPES
    images_per_class: int = 100
    size: int = 112
    k: int = 7
    jitter: int = 8
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        self.classes = tuple(self.classes)
        if not self.classes:
            raise ConfigError("at least one class is required")
        unknown = [c for c in self.classes if c not in SHAPES]
        if unknown:
            raise ConfigError(f"unknown shape classes {unknown}; choose from {list(SHAPES)}")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("shape classes must be distinct")
        if self.images_per_class < 1:
            raise ConfigError("images_per_class must be ≥ 1")
        if self.k < 1 or self.size < self.k or self.size % self.k:
            raise ConfigError(f"image size {self.size} must be a multiple of k={self.k}")
        if self.jitter < 0 or self.noise < 0:
            raise ConfigError("jitter and noise must be ≥ 0")

    @property
    def cell(self) -> int:
        return self.size // self.k


def _shape_mask(name: str, size: int, cell: int, cy: float, cx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    if name == "square":
        return ((np.abs(dy) <= cell) & (np.abs(dx) <= cell)).astype(np.float64)
    if name == "cross":
        arm, half = 1.5 * cell, 0.25 * cell
        vertical = (np.abs(dx) <= half) & (np.abs(dy) <= arm)
        horizontal = (np.abs(dy) <= half) & (np.abs(dx) <= arm)
        return (vertical | horizontal).astype(np.float64)
    if name == "stripe":
        return ((np.abs(dy) <= 0.25 * cell) & (np.abs(dx) <= 1.5 * cell)).astype(np.float64)
    sigma = 0.6 * cell
    return np.exp(-0.5 * (dy**2 + dx**2) / sigma**2)


def render_shape(spec: SyntheticDatasetSpec, class_index: int, index: int) -> ImageTensor:
    """One image; a function of (spec.seed, class, index) only."""
    rng = make_rng(spec.seed, SYNTH_STREAM, class_index, index)
    centre = spec.size / 2.0
    cy, cx = centre + rng.integers(-spec.jitter, spec.jitter + 1, size=2)
    pixels = _shape_mask(spec.classes[class_index], spec.size, spec.cell, cy, cx)
    if spec.noise > 0:
        pixels = pixels + rng.normal(0.0, spec.noise, size=pixels.shape)
    return ImageTensor(np.clip(pixels, 0.0, 1.0))


def generate_shapes(spec: SyntheticDatasetSpec) -> Tuple[List[ImageTensor], np.ndarray, List[str]]:
    images, labels, names = [], [], []
    for c, shape in enumerate(spec.classes):
        for i in range(spec.images_per_class):
            images.append(render_shape(spec, c, i))
            labels.append(c)
            names.append(f"{shape}_{i:04d}.png")
    return images, np.asarray(labels, dtype=np.int64), names


def write_dataset(spec: SyntheticDatasetSpec, out_dir: Path | str) -> Path:
    """Write PNGs, labels.csv (filename,class) and manifest.json; returns the directory."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    images, labels, names = generate_shapes(spec)
    for image, name in zip(images, names):
        save_image(d / name, image)
    pd.DataFrame({"filename": names, "class": labels}).to_csv(d / "labels.csv", index=False)
    manifest = {"format": DATASET_FORMAT, "spec": asdict(spec), "class_names": list(spec.classes)}
    save_json(d / "manifest.json", manifest)
    logger.info("wrote %d images in %d classes to %s", len(images), len(spec.classes), d)
    return d


@dataclass(eq=False)
class Dataset:
    images: List[ImageTensor]
    labels: np.ndarray
    image_ids: List[str]
    class_names: List[str]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def load_dataset(directory: Path | str) -> Dataset:
    d = Path(directory)
    manifest = load_versioned(d / "manifest.json", DATASET_FORMAT)
    labels = pd.read_csv(d / "labels.csv")
    images = [load_image(d / name) for name in labels["filename"]]
    ids = [Path(name).stem for name in labels["filename"]]
    return Dataset(images, labels["class"].to_numpy(dtype=np.int64), ids, list(manifest["class_names"]))


def planted_oracle_family(
    n: int,
    *,
    size: int = 112,
    k: int = 7,
    n_cells: int = 3,
    combine: CombineMode = "linear",
    tolerance: float = 0.2,
    seed: int = 0,
    equal_weights: bool = False,
    background: float = 0.5,
    brightness: Tuple[float, float] = (0.8, 0.95),
) -> List[PlantedOracle]:
    """
    `n` planted oracles on a flat background.

    Each oracle plants `n_cells` random cells whose reference pixels are
    brighter than the background; the heaviest cell is the brightest, so
    the ranking is visible to an agent that only sees the image.
    """
    if n < 0 or n_cells < 1 or n_cells > k * k:
        raise ConfigError("need n ≥ 0 and 1 ≤ n_cells ≤ k²")
    lo, hi = brightness
    levels = np.linspace(hi, lo, n_cells) if n_cells > 1 else np.array([hi])
    oracles = []
    for i in range(n):
        rng = make_rng(seed, SYNTH_STREAM, 1_000_000 + i)
        cells = rng.choice(k * k, size=n_cells, replace=False)
        if equal_weights:
            weights = np.full(n_cells, 1.0 / n_cells)
        else:
            weights = np.sort(rng.dirichlet(np.ones(n_cells)))[::-1]
            weights = weights / weights.sum()
        ref = np.full((size, size, 1), background)
        grid = GridSpec(k, size, size)
        for cell, level in zip(cells, levels):
            rows, cols = grid.cell_slice(int(cell))
            ref[rows, cols] = level
        config = PlantedOracleConfig(
            reference_image=ImageTensor(ref),
            salient_cells=[(int(c), float(w)) for c, w in zip(cells, weights)],
            combine=combine,
            tolerance=tolerance,
            k=k,
        )
        oracles.append(PlantedOracle(config))
    return oracles


def oracle_ids(oracles: Sequence[PlantedOracle], prefix: str = "oracle") -> List[str]:
    return [f"{prefix}-{i:04d}" for i in range(len(oracles))]
