"""The black-box classifier boundary.

Engine code only ever calls `score`; everything else about a model stays
behind this interface.
"""

from __future__ import annotations

import threading
import time
from abc import ABC, abstractmethod
from typing import Sequence, Tuple

import numpy as np

from ..errors import ContractViolation
from ..models import ClassScores, ImageTensor, ScoreKind


class BaseClassifier(ABC):
    """An image → ClassScores function with a declared input shape."""

    num_classes: int
    input_shape: Tuple[int, int, int]
    kind: ScoreKind = "softmax"

    def score(self, image: ImageTensor) -> ClassScores:
        if image.shape != tuple(self.input_shape):
            raise ContractViolation(
                f"image shape {image.shape} does not match classifier input {tuple(self.input_shape)}"
            )
        return self._score(image)

    @abstractmethod
    def _score(self, image: ImageTensor) -> ClassScores:
        ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ConstantClassifier(BaseClassifier):
    """Returns the same scores for every image."""

    def __init__(self, scores: Sequence[float], input_shape: Tuple[int, int, int], kind: ScoreKind = "multilabel"):
        self._scores = ClassScores(np.asarray(scores, dtype=np.float64), kind)
        self.num_classes = len(self._scores)
        self.input_shape = tuple(input_shape)
        self.kind = kind

    def _score(self, image: ImageTensor) -> ClassScores:
        return self._scores


class CountingClassifier(BaseClassifier):
    """Wraps a classifier and counts score calls (thread-safe)."""

    def __init__(self, inner: BaseClassifier):
        self.inner = inner
        self.num_classes = inner.num_classes
        self.input_shape = tuple(inner.input_shape)
        self.kind = inner.kind
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def reset(self) -> None:
        with self._lock:
            self._calls = 0

    def _score(self, image: ImageTensor) -> ClassScores:
        with self._lock:
            self._calls += 1
        return self.inner.score(image)

    def close(self) -> None:
        self.inner.close()


class SlowClassifier(BaseClassifier):
    """Adds a fixed per-call cost, standing in for an expensive base model."""

    def __init__(self, inner: BaseClassifier, delay: float = 0.001):
        if delay < 0:
            raise ContractViolation("delay must be ≥ 0")
        self.inner = inner
        self.delay = float(delay)
        self.num_classes = inner.num_classes
        self.input_shape = tuple(inner.input_shape)
        self.kind = inner.kind

    def _score(self, image: ImageTensor) -> ClassScores:
        time.sleep(self.delay)
        return self.inner.score(image)

    def close(self) -> None:
        self.inner.close()
