"""
Small trainable image classifier.

The network downsamples the image by cell pooling, then applies one
rectifier hidden layer and a softmax (or per-class sigmoid) head. It is
trained with scikit-learn's MLPClassifier and exported to the versioned
``rexl-weights/1`` JSON format; inference is a numpy forward pass over the
exported arrays.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import accuracy_score
from sklearn.neural_network import MLPClassifier

from ..core import pool_channels
from ..errors import ConfigError, ContractViolation, FormatError, TrainingError
from ..models import ClassScores, GridSpec, ImageTensor
from ..storage import decode_layers, encode_layers, load_versioned, save_json
from .base import BaseClassifier

logger = logging.getLogger(__name__)

WEIGHTS_FORMAT = "rexl-weights/1"

HeadKind = Literal["softmax", "sigmoid"]


@dataclass
class TinyNetConfig:
    pool: int = 14
    hidden: int = 64
    head: HeadKind = "softmax"
    epochs: int = 200
    learning_rate: float = 1e-3
    alpha: float = 1e-4
    min_accuracy: float = 0.95

    def __post_init__(self) -> None:
        if self.pool < 1 or self.hidden < 1 or self.epochs < 1:
            raise ConfigError("pool, hidden and epochs must be positive")
        if self.head not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown head {self.head!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")


@dataclass(eq=False)
class TinyNetParams:
    layers: List[Tuple[np.ndarray, np.ndarray]]
    head: HeadKind = "softmax"
    input_shape: Tuple[int, int, int] = (112, 112, 1)
    pool: int = 14
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in self.layers]
        self.input_shape = tuple(int(x) for x in self.input_shape)
        if not self.layers:
            raise ContractViolation("network needs at least one layer")
        if self.head not in ("softmax", "sigmoid"):
            raise ContractViolation(f"unknown head {self.head!r}")
        expected = self.pool * self.pool * self.input_shape[2]
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractViolation(f"layer {i}: weight/bias shapes {w.shape}/{b.shape} disagree")
            if w.shape[0] != expected:
                raise ContractViolation(f"layer {i}: expects {w.shape[0]} inputs, previous gives {expected}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractViolation(f"layer {i}: non-finite parameters")
            expected = w.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.layers[-1][0].shape[1])


def image_features(image: ImageTensor, pool: int) -> np.ndarray:
    """Cell-pooled pixels in [0, 1], flattened row-major."""
    grid = GridSpec(pool, image.height, image.width)
    lo, hi = image.value_range
    return ((pool_channels(image.data, grid) - lo) / (hi - lo)).reshape(-1)


def tiny_forward(params: TinyNetParams, features: np.ndarray) -> np.ndarray:
    h = np.asarray(features, dtype=np.float64)
    for w, b in params.layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = params.layers[-1]
    z = h @ w + b
    if params.head == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TinyNetClassifier(BaseClassifier):
    def __init__(self, params: TinyNetParams):
        self.params = params
        self.num_classes = params.num_classes
        self.input_shape = params.input_shape
        self.kind = "softmax" if params.head == "softmax" else "multilabel"

    def _score(self, image: ImageTensor) -> ClassScores:
        probs = tiny_forward(self.params, image_features(image, self.params.pool))
        return ClassScores(np.clip(probs, 0.0, 1.0), self.kind)


def _export_layers(
    clf: MLPClassifier, num_classes: int, head: HeadKind
) -> List[Tuple[np.ndarray, np.ndarray]]:
    layers = [(np.array(w), np.array(b)) for w, b in zip(clf.coefs_, clf.intercepts_)]
    w_out, b_out = layers[-1]
    if head == "softmax" and w_out.shape[1] == 1:
        # one logistic unit z → logits (−z/2, z/2); softmax reproduces σ(z)
        layers[-1] = (np.hstack([-w_out / 2, w_out / 2]), np.concatenate([-b_out / 2, b_out / 2]))
    elif head == "softmax" and w_out.shape[1] != num_classes:
        raise TrainingError("trained head width does not match the class count")
    return layers


def train_tiny_classifier(
    images: Sequence[ImageTensor],
    labels: Sequence[int],
    config: Optional[TinyNetConfig] = None,
    seed: int = 0,
    num_classes: Optional[int] = None,
) -> TinyNetParams:
    """
    Fit the tiny network and return exported parameters.

    Args:
        images: training images, all of one shape
        labels: class index per image
        config: architecture and optimisation settings
        seed: random state for weight init and batching
        num_classes: class count (defaults to max label + 1)

    Raises:
        ContractViolation: empty dataset, inconsistent shapes or labels
        TrainingError: training accuracy below ``config.min_accuracy``
    """
    config = config or TinyNetConfig()
    if len(images) == 0:
        raise ContractViolation("training set is empty")
    if len(images) != len(labels):
        raise ContractViolation("images and labels differ in length")
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(num_classes if num_classes is not None else y.max() + 1)
    if n_classes < 2:
        raise ContractViolation("need at least two classes")
    if y.min() < 0 or y.max() >= n_classes:
        raise ContractViolation("labels outside the class range")
    if len(np.unique(y)) != n_classes:
        raise ContractViolation("every class needs at least one example")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ContractViolation("images differ in shape")

    X = np.vstack([image_features(im, config.pool) for im in images])
    target = np.eye(n_classes, dtype=np.int64)[y] if config.head == "sigmoid" else y

    clf = MLPClassifier(
        hidden_layer_sizes=(config.hidden,),
        activation="relu",
        solver="adam",
        alpha=config.alpha,
        learning_rate_init=config.learning_rate,
        max_iter=config.epochs,
        random_state=seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        clf.fit(X, target)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logger.warning("tiny classifier hit the epoch limit (%d) before converging", config.epochs)

    params = TinyNetParams(
        layers=_export_layers(clf, n_classes, config.head),
        head=config.head,
        input_shape=shape,
        pool=config.pool,
    )
    predicted = np.argmax(tiny_forward(params, X), axis=1)
    accuracy = float(accuracy_score(y, predicted))
    logger.info("tiny classifier training accuracy %.4f over %d images", accuracy, len(y))
    params.extra["train_accuracy"] = accuracy
    if accuracy < config.min_accuracy:
        raise TrainingError(
            f"training accuracy {accuracy:.3f} below required {config.min_accuracy:.3f}",
            {"accuracy": accuracy, "epochs": int(clf.n_iter_), "loss": float(clf.loss_)},
        )
    return params


def save_tiny_params(path: Path | str, params: TinyNetParams) -> None:
    save_json(
        path,
        {
            "format": WEIGHTS_FORMAT,
            "layers": encode_layers(params.layers),
            "head": params.head,
            "input_shape": list(params.input_shape),
            "pool": params.pool,
            "extra": params.extra,
        },
    )


def load_tiny_params(path: Path | str) -> TinyNetParams:
    obj = load_versioned(path, WEIGHTS_FORMAT)
    try:
        return TinyNetParams(
            layers=decode_layers(obj["layers"]),
            head=obj["head"],
            input_shape=tuple(obj["input_shape"]),
            pool=int(obj["pool"]),
            extra=dict(obj.get("extra", {})),
        )
    except (KeyError, TypeError, ContractViolation) as exc:
        raise FormatError(f"{path}: malformed weight file ({exc})") from exc
