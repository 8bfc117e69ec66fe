"""
Explainer registry and the λ ablation.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .baselines import RiseConfig, greedy_saliency, pooled_map, random_saliency, rise_saliency
from .classifiers.base import BaseClassifier
from .classifiers.oracle import PlantedOracle
from .core import RANDOM_MAP_STREAM, auc, derive_seed, make_rng
from .environment import EpsilonReferencePolicy, MaskingEnv, run_episode
from .errors import ConfigError
from .metrics import EvalConfig, EvalItem, Explainer, deletion_curve
from .models import ImageTensor, SaliencyMap
from .policy import PolicyParams
from .saliency import accumulate_credit, explain, normalize_map
from .synthetic import planted_oracle_family

logger = logging.getLogger(__name__)

METHODS = ("rexl", "rise", "greedy", "random")


def _image_key(image: ImageTensor) -> int:
    return zlib.crc32(np.ascontiguousarray(image.data).tobytes())


def make_explainers(
    methods: Sequence[str],
    *,
    params: Optional[PolicyParams] = None,
    k: int = 7,
    lam: float = 1.0,
    seed: int = 0,
    rise: Optional[RiseConfig] = None,
) -> Dict[str, Explainer]:
    """Map method names to (classifier, image, class) → SaliencyMap callables."""
    rise = rise or RiseConfig(k=k, seed=seed)
    out: Dict[str, Explainer] = {}
    for name in methods:
        if name == "rexl":
            if params is None:
                raise ConfigError("method 'rexl' needs agent weights")
            agent = params
            out[name] = lambda clf, img, c: explain(agent, clf, img, c, lam, seed).saliency
        elif name == "rise":
            out[name] = lambda clf, img, c: pooled_map(rise_saliency(clf, img, c, rise), k)
        elif name == "greedy":
            out[name] = lambda clf, img, c: greedy_saliency(clf, img, c, None, lam, k=k, seed=seed).saliency
        elif name == "random":
            # Seeded per image so every image gets its own ranking.
            out[name] = lambda clf, img, c: random_saliency(
                make_rng(seed, RANDOM_MAP_STREAM, _image_key(img)), k
            )
        else:
            raise ConfigError(f"unknown method {name!r}")
    return out


def oracle_items(oracles: Sequence[PlantedOracle], prefix: str = "oracle") -> List[EvalItem]:
    """One evaluation item per oracle: its reference image under its own scores."""
    return [
        EvalItem(o.config.reference_image, o.config.target_class, f"{prefix}-{i:04d}", o)
        for i, o in enumerate(oracles)
    ]


@dataclass(eq=False)
class AblationResult:
    table: pd.DataFrame

    def aucs(self, lam: float) -> np.ndarray:
        rows = self.table[self.table["lam"] == lam].sort_values("config")
        return rows["deletion_auc"].to_numpy()

    def summary(self) -> pd.DataFrame:
        return self.table.groupby("lam", sort=True)["deletion_auc"].agg(["mean", "std", "count"]).reset_index()

    def paired_test(self, better: float = 1.0, worse: float = 0.0) -> Tuple[float, float]:
        """One-sided paired t-test that λ=`better` has lower deletion AUC than λ=`worse`."""
        result = stats.ttest_rel(self.aucs(better), self.aucs(worse), alternative="less")
        return float(result.statistic), float(result.pvalue)


def run_lambda_ablation(
    n: int = 50,
    lambdas: Sequence[float] = (0.0, 0.7, 0.8, 1.0),
    *,
    epsilon: float = 0.5,
    size: int = 56,
    k: int = 7,
    n_cells: int = 3,
    combine: str = "redundant",
    seed: int = 0,
    eval_config: Optional[EvalConfig] = None,
) -> AblationResult:
    """
    Deletion AUC of maps built with each λ from the same rollouts.

    Every configuration is a planted oracle with equal weights; one
    ε-reference rollout per configuration supplies the deletion trace
    that all λ values share, so the comparison is paired.
    """
    if not lambdas:
        raise ConfigError("at least one lambda is required")
    eval_config = eval_config or EvalConfig(seed=seed)
    oracles = planted_oracle_family(
        n, size=size, k=k, n_cells=n_cells, combine=combine,  # type: ignore[arg-type]
        seed=seed, equal_weights=True,
    )
    rows = []
    for i, oracle in enumerate(oracles):
        image = oracle.config.reference_image
        policy = EpsilonReferencePolicy(oracle.config.ranked_cells(), epsilon, derive_seed(seed, i))
        trace = run_episode(MaskingEnv(oracle, k), policy, image, oracle.config.target_class, seed)
        for lam in lambdas:
            saliency = normalize_map(accumulate_credit(trace, lam), lam)
            curve = deletion_curve(oracle, image, oracle.config.target_class, saliency, eval_config)
            rows.append({"config": i, "lam": float(lam), "deletion_auc": auc(curve)})
    table = pd.DataFrame(rows, columns=["config", "lam", "deletion_auc"])
    logger.info("lambda ablation over %d configurations done", n)
    return AblationResult(table)


def mean_auc(classifier: BaseClassifier, items: Sequence[EvalItem], maps: Sequence[SaliencyMap], config: EvalConfig) -> float:
    """Mean deletion AUC of precomputed maps; items may carry their own classifier."""
    values = [
        auc(deletion_curve(item.classifier or classifier, item.image, item.class_index, m, config))
        for item, m in zip(items, maps)
    ]
    return float(np.mean(values)) if values else float("nan")
