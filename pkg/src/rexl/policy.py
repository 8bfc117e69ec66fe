"""
Policy/value network for the masking agent.

A rectifier MLP (default 256 and 128 hidden units) shared by a policy head
with one logit per grid cell and a scalar value head. Parameters persist to
the versioned ``rexl-agent/1`` JSON format, which reuses the layer encoding
of the tiny classifier's weight files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from .core import INIT_STREAM, make_rng
from .environment import EncoderConfig, EnvState, Observation
from .errors import ContractViolation, FormatError
from .storage import decode_layers, encode_layers, load_versioned, save_json

logger = logging.getLogger(__name__)

AGENT_FORMAT = "rexl-agent/1"
LOG_FLOOR = 1e-12

Scope = Literal["DS", "CS", "IS"]
Layer = Tuple[np.ndarray, np.ndarray]


def _as_layer(pair: Sequence[Any]) -> Layer:
    return np.asarray(pair[0], dtype=np.float64), np.asarray(pair[1], dtype=np.float64)


@dataclass(eq=False)
class PolicyParams:
    """
    Network weights plus the metadata needed to rebuild observations.

    `hidden` holds the (weight, bias) pairs of the shared trunk;
    `policy_head` maps the last hidden layer to the action logits and
    `value_head` to a single value estimate.
    """
    hidden: List[Layer]
    policy_head: Layer
    value_head: Layer
    scope: Scope = "CS"
    class_index: Optional[int] = None
    gamma: float = 1.0
    k: Optional[int] = 7
    pool: int = 28
    num_classes: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.hidden = [_as_layer(layer) for layer in self.hidden]
        self.policy_head = _as_layer(self.policy_head)
        self.value_head = _as_layer(self.value_head)
        if self.scope not in ("DS", "CS", "IS"):
            raise ContractViolation(f"unknown scope {self.scope!r}")
        if self.scope == "DS" and not self.num_classes:
            raise ContractViolation("dataset scope needs num_classes for the one-hot block")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractViolation(f"gamma must lie in (0, 1], got {self.gamma}")
        width = self.input_width
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractViolation(f"layer {i}: weight/bias shapes {w.shape}/{b.shape} disagree")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractViolation(f"layer {i}: non-finite parameters")
        for i, (w, _) in enumerate(self.hidden):
            if w.shape[0] != width:
                raise ContractViolation(f"hidden layer {i} expects {w.shape[0]} inputs, got {width}")
            width = w.shape[1]
        if self.policy_head[0].shape[0] != width or self.value_head[0].shape[0] != width:
            raise ContractViolation("heads do not match the last hidden width")
        if self.value_head[0].shape[1] != 1:
            raise ContractViolation("value head must have one output")
        if self.k is not None and self.n_actions != self.k * self.k:
            raise ContractViolation(f"policy head has {self.n_actions} logits, expected {self.k * self.k}")

    @property
    def layers(self) -> List[Layer]:
        return list(self.hidden) + [self.policy_head, self.value_head]

    @property
    def input_width(self) -> int:
        return int(self.hidden[0][0].shape[0]) if self.hidden else int(self.policy_head[0].shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.policy_head[0].shape[1])

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(pool=self.pool, num_classes=self.num_classes if self.scope == "DS" else None)

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order (w, b per layer)."""
        return [a for w, b in self.layers for a in (w, b)]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        arrays = list(arrays)
        n = len(self.hidden)
        pairs = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(n + 2)]
        return PolicyParams(
            hidden=pairs[:n],
            policy_head=pairs[n],
            value_head=pairs[n + 1],
            scope=self.scope,
            class_index=self.class_index,
            gamma=self.gamma,
            k=self.k,
            pool=self.pool,
            num_classes=self.num_classes,
            extra=dict(self.extra),
        )

    def copy(self) -> "PolicyParams":
        return self.with_arrays([np.array(a, copy=True) for a in self.arrays()])


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(
    input_width: int,
    n_actions: int = 49,
    hidden: Sequence[int] = (256, 128),
    *,
    seed: int = 0,
    scope: Scope = "CS",
    class_index: Optional[int] = None,
    gamma: float = 1.0,
    k: Optional[int] = 7,
    pool: int = 28,
    num_classes: Optional[int] = None,
) -> PolicyParams:
    """Glorot-uniform trunk and value head, zero biases, zero policy head."""
    rng = make_rng(seed, INIT_STREAM)
    layers = []
    width = input_width
    for units in hidden:
        layers.append((_glorot(rng, width, units), np.zeros(units)))
        width = units
    policy_head = (np.zeros((width, n_actions)), np.zeros(n_actions))
    value_head = (_glorot(rng, width, 1), np.zeros(1))
    return PolicyParams(
        layers, policy_head, value_head, scope, class_index, gamma, k, pool, num_classes
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-6:
            raise ContractViolation("action probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    def greedy(self) -> int:
        """Most probable action; ties to the lowest index."""
        return int(np.argmax(self.probs))

    def sample(self, rng: np.random.Generator) -> int:
        cdf = np.cumsum(self.probs)
        return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), self.probs.size - 1))


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    activations: List[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    values: np.ndarray


def forward_batch(params: PolicyParams, X: np.ndarray) -> ForwardCache:
    """Batched forward pass keeping the intermediates needed for backprop."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_width:
        raise ContractViolation(f"observation width {X.shape[1]} != network input {params.input_width}")
    inputs, activations = [], []
    h = X
    for w, b in params.hidden:
        inputs.append(h)
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    logits = h @ params.policy_head[0] + params.policy_head[1]
    values = (h @ params.value_head[0] + params.value_head[1])[:, 0]
    return ForwardCache(inputs, activations, logits, softmax(logits), values)


def policy_forward(params: PolicyParams, observation: Observation) -> Tuple[ActionDistribution, float]:
    obs = np.asarray(observation, dtype=np.float64)
    if obs.ndim != 1:
        raise ContractViolation("policy_forward takes a single observation vector")
    cache = forward_batch(params, obs[None, :])
    return ActionDistribution(cache.probs[0]), float(cache.values[0])


class GreedyPolicy:
    """
    Argmax of the policy at every step, ties to the lowest cell.

    The argmax runs over all k² cells, occupied or not: `state` is
    ignored, and picking an already masked cell is a legal no-op step
    with zero score drop.
    """

    def __init__(self, params: PolicyParams):
        self.params = params

    def act(self, observation: Observation, state: Optional[EnvState] = None) -> Tuple[int, float]:
        dist, _ = policy_forward(self.params, observation)
        action = dist.greedy()
        return action, float(dist.probs[action])


class SamplingPolicy:
    """Samples from the policy; used for training rollouts."""

    def __init__(self, params: PolicyParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def act(self, observation: Observation, state: Optional[EnvState] = None) -> Tuple[int, float]:
        dist, _ = policy_forward(self.params, observation)
        action = dist.sample(self.rng)
        return action, max(float(dist.probs[action]), LOG_FLOOR)


def params_to_dict(params: PolicyParams) -> Dict[str, Any]:
    return {
        "format": AGENT_FORMAT,
        "layers": encode_layers(params.layers),
        "n_hidden": len(params.hidden),
        "head": "softmax",
        "scope": params.scope,
        "class_index": params.class_index,
        "gamma": params.gamma,
        "k": params.k,
        "pool": params.pool,
        "num_classes": params.num_classes,
        "extra": params.extra,
    }


def params_from_dict(obj: Dict[str, Any]) -> PolicyParams:
    layers = decode_layers(obj["layers"])
    n = int(obj["n_hidden"])
    if len(layers) != n + 2:
        raise FormatError(f"expected {n + 2} layers, found {len(layers)}")
    return PolicyParams(
        hidden=layers[:n],
        policy_head=layers[n],
        value_head=layers[n + 1],
        scope=obj["scope"],
        class_index=obj.get("class_index"),
        gamma=float(obj["gamma"]),
        k=obj.get("k"),
        pool=int(obj["pool"]),
        num_classes=obj.get("num_classes"),
        extra=dict(obj.get("extra", {})),
    )


def save_params(path: Path | str, params: PolicyParams) -> None:
    save_json(path, params_to_dict(params))


def load_params(path: Path | str) -> PolicyParams:
    """Load agent weights; raises FormatVersionError or FormatError on bad files."""
    obj = load_versioned(path, AGENT_FORMAT)
    try:
        return params_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed agent file ({exc})") from exc
