"""
Turning deletion traces into saliency maps.

The credit for the cell deleted at step t is Σ_{i≥t} λ^{i−t}·δ_i: it keeps
its own score drop and a λ-discounted share of every later drop. λ=0
credits only the immediate drop; λ=1 credits the cell with everything that
happened from its deletion on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import matplotlib
import numpy as np

from .classifiers.base import BaseClassifier, CountingClassifier
from .core import bilinear_upsample, gaussian_blur
from .environment import MaskingEnv, Policy, run_episode
from .errors import ContractViolation
from .image_io import save_image
from .models import DeletionTrace, ImageTensor, SaliencyMap
from .policy import GreedyPolicy, PolicyParams
from .storage import save_json

logger = logging.getLogger(__name__)

COLORMAP = "jet"


def accumulate_credit(trace: DeletionTrace, lam: float) -> np.ndarray:
    """Raw k×k credit via one backward pass S_t = δ_t + λ·S_{t+1}.

    Raw weights may be negative; repeated cells accumulate.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"lambda must lie in [0, 1], got {lam}")
    raw = np.zeros(trace.k * trace.k)
    suffix = 0.0
    for t in range(len(trace) - 1, -1, -1):
        suffix = trace.deltas[t] + lam * suffix
        raw[trace.cells[t]] += suffix
    return raw.reshape(trace.k, trace.k)


def normalize_map(raw: np.ndarray, lam: float = 1.0) -> SaliencyMap:
    """Clamp negatives, divide by the sum; all-zero input gives a flagged uniform map."""
    w = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    total = float(w.sum())
    if total <= 0.0:
        logger.warning("saliency map has no positive mass; returning the uniform map")
        return SaliencyMap(np.full(w.shape, 1.0 / w.size), lam, True, True)
    return SaliencyMap(w / total, lam, True, False)


@dataclass(eq=False)
class Heatmap:
    field: np.ndarray
    colored: ImageTensor
    overlay: ImageTensor


def render_heatmap(
    saliency: SaliencyMap,
    height: int,
    width: int,
    sigma: Optional[float] = None,
    image: Optional[ImageTensor] = None,
    alpha: float = 0.5,
) -> Heatmap:
    """
    Pixel heatmap plus a blue→red colour overlay.

    The grid weights are bilinearly upsampled to height×width and blurred
    with `sigma` pixels (default: one cell). `sigma=0` skips the blur.
    """
    if sigma is None:
        sigma = float(min(height, width) // saliency.k)
    if sigma < 0:
        raise ContractViolation("sigma must be ≥ 0")
    field = bilinear_upsample(saliency.weights, height, width)
    if sigma > 0:
        hi = max(1.0, float(field.max()))
        field = gaussian_blur(ImageTensor(field, (0.0, hi)), sigma).data[:, :, 0]
    peak = float(field.max())
    scaled = field / peak if peak > 0 else field
    colored = matplotlib.colormaps[COLORMAP](scaled)[:, :, :3]
    if image is None:
        base = np.zeros_like(colored)
        blend = colored
    else:
        if (image.height, image.width) != (height, width):
            raise ContractViolation("overlay image does not match the heatmap size")
        base = image.normalized()
        if base.shape[2] == 1:
            base = np.repeat(base, 3, axis=2)
        blend = (1.0 - alpha) * base + alpha * colored
    return Heatmap(field, ImageTensor(colored), ImageTensor(np.clip(blend, 0.0, 1.0)))


@dataclass(eq=False)
class Explanation:
    saliency: SaliencyMap
    trace: DeletionTrace
    calls: int


def explain_with_policy(
    policy: Policy,
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    *,
    k: int = 7,
    encoder=None,
    lam: float = 1.0,
    seed: int = 0,
) -> Explanation:
    counted = CountingClassifier(classifier)
    env = MaskingEnv(counted, k, encoder)
    trace = run_episode(env, policy, image, class_index, seed)
    saliency = normalize_map(accumulate_credit(trace, lam), lam)
    return Explanation(saliency, trace, counted.calls)


def explain(
    params: PolicyParams,
    classifier: BaseClassifier,
    image: ImageTensor,
    class_index: int,
    lam: float = 1.0,
    seed: int = 0,
) -> Explanation:
    """Greedy rollout of the agent, credit accumulation and normalization.

    Performs exactly k² + 1 classifier calls.
    """
    if params.k is None:
        raise ContractViolation("agent parameters carry no grid size")
    return explain_with_policy(
        GreedyPolicy(params), classifier, image, class_index,
        k=params.k, encoder=params.encoder, lam=lam, seed=seed,
    )


def export_map(
    path: Path | str, saliency: SaliencyMap, *, seed: int, config_hash: str, **extra: Any
) -> Dict[str, Any]:
    """Write the map JSON stamped with seed and config hash."""
    obj = saliency.to_dict()
    obj.update({"seed": int(seed), "config_hash": config_hash})
    obj.update(extra)
    save_json(path, obj)
    return obj


def export_heatmap(directory: Path | str, stem: str, heatmap: Heatmap) -> Dict[str, Path]:
    d = Path(directory)
    return {
        "heatmap": save_image(d / f"{stem}_heatmap.png", heatmap.colored),
        "overlay": save_image(d / f"{stem}_overlay.png", heatmap.overlay),
    }
