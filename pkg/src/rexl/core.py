"""
Deterministic primitives shared by every rexl module.

Seeded random streams, grid masking, cell pooling, bilinear upsampling,
Gaussian blur and AUC integration. Everything here is a pure function of
its arguments and safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Tuple

import numpy as np
from scipy import ndimage

from .errors import ContractViolation
from .models import GridMask, GridSpec, ImageTensor, ScoreCurve


# Stream ids keep independent consumers of one seed apart.
NOISE_STREAM = 1
POLICY_STREAM = 2
EPISODE_STREAM = 3
RISE_STREAM = 4
REPLAY_STREAM = 5
SYNTH_STREAM = 6
RANDOM_MAP_STREAM = 7
INIT_STREAM = 8

FillMode = Literal["noise", "midpoint"]


def make_rng(seed: int, *streams: int) -> np.random.Generator:
    """Generator for (seed, stream...) with independent streams."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in streams))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, *streams: int) -> int:
    """A 64-bit seed derived from (seed, stream...)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in streams))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Rng:
    """A named random stream: same (seed, stream) always yields the same sequence."""
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return make_rng(self.seed, self.stream)

    def child(self, index: int) -> np.random.Generator:
        return make_rng(self.seed, self.stream, index)


@lru_cache(maxsize=64)
def _noise_field(
    height: int, width: int, channels: int, lo: float, hi: float, noise_seed: int
) -> np.ndarray:
    field = make_rng(noise_seed, NOISE_STREAM).uniform(lo, hi, size=(height, width, channels))
    field.setflags(write=False)
    return field


def noise_field(image: ImageTensor, noise_seed: int) -> np.ndarray:
    """Per-pixel, per-channel uniform noise over the image's value range."""
    lo, hi = image.value_range
    return _noise_field(image.height, image.width, image.channels, lo, hi, int(noise_seed))


def apply_mask(image: ImageTensor, mask: GridMask, fill: FillMode = "noise") -> ImageTensor:
    """Replace the pixels of occupied cells.

    With ``fill="noise"`` masked pixels take the episode noise fixed by
    ``mask.noise_seed``; ``"midpoint"`` uses the middle of the value range.
    Unoccupied pixels are returned bit-identical.
    """
    if not mask.grid.matches(image):
        raise ContractViolation(
            f"mask grid is {mask.grid.height}×{mask.grid.width}, image is "
            f"{image.height}×{image.width}"
        )
    if not mask.occupied.any():
        return image
    pixels = mask.pixel_mask()[:, :, None]
    if fill == "noise":
        replacement = noise_field(image, mask.noise_seed)
    elif fill == "midpoint":
        replacement = np.full(image.shape, image.midpoint)
    else:
        raise ContractViolation(f"unknown fill mode {fill!r}")
    return image.with_data(np.where(pixels, replacement, image.data))


def composite(background: ImageTensor, foreground: ImageTensor, mask: GridMask) -> ImageTensor:
    """Foreground pixels inside occupied cells, background elsewhere."""
    if background.shape != foreground.shape:
        raise ContractViolation("composite needs images of identical shape")
    if not mask.grid.matches(background):
        raise ContractViolation("mask grid does not tile the image")
    pixels = mask.pixel_mask()[:, :, None]
    return background.with_data(np.where(pixels, foreground.data, background.data))


def pool_channels(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Mean of each grid cell per channel: H×W×C → k×k×C."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[:2] != (grid.height, grid.width):
        raise ContractViolation(f"array of shape {arr.shape} does not match the grid")
    sums = np.add.reduceat(arr, grid.row_edges[:-1], axis=0)
    sums = np.add.reduceat(sums, grid.col_edges[:-1], axis=1)
    counts = np.outer(grid.row_sizes, grid.col_sizes)[:, :, None]
    return sums / counts


def cell_means(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Mean over each cell's pixels and channels: → k×k."""
    return pool_channels(values, grid).mean(axis=2)


def bilinear_upsample(
    grid_values: np.ndarray,
    out_h: int,
    out_w: int,
    shift: Tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Interpolate cell values at pixel centres offset by ``shift = (dx, dy)``.

    Cell values sit at cell centres; samples beyond the outermost centres
    take the nearest edge value, so the output stays within the range of
    the input grid.
    """
    values = np.asarray(grid_values, dtype=np.float64)
    if values.ndim != 2:
        raise ContractViolation("grid values must be 2-D")
    kr, kc = values.shape
    if out_h < kr or out_w < kc:
        raise ContractViolation(f"output {out_h}×{out_w} smaller than the {kr}×{kc} grid")
    dx, dy = float(shift[0]), float(shift[1])
    if abs(dx) >= out_w / kc or abs(dy) >= out_h / kr:
        raise ContractViolation(f"shift {shift} not smaller than one cell")
    gy = (np.arange(out_h) + 0.5 + dy) * kr / out_h - 0.5
    gx = (np.arange(out_w) + 0.5 + dx) * kc / out_w - 0.5
    coords = np.stack(np.meshgrid(gy, gx, indexing="ij"))
    out = ndimage.map_coordinates(values, coords, order=1, mode="nearest")
    return np.clip(out, values.min(), values.max())


def gaussian_blur(image: ImageTensor, sigma: float) -> ImageTensor:
    """Separable Gaussian blur over the spatial axes with reflect padding."""
    if not sigma > 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")
    lo, hi = image.value_range
    blurred = ndimage.gaussian_filter(image.data, sigma=(sigma, sigma, 0), mode="reflect")
    return image.with_data(np.clip(blurred, lo, hi))


def auc(curve: ScoreCurve) -> float:
    """Trapezoidal area under a score curve."""
    if len(curve) < 2:
        raise ContractViolation("a score curve needs at least 2 points")
    return float(np.trapz(curve.scores, curve.fractions))
