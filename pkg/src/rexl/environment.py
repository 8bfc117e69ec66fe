"""
Sequential masking environment.

The state is the partially masked image, an action masks one grid cell and
the reward is the negative target-class score after the action. Episodes
last exactly k² steps; masking an already masked cell changes no pixels
but still costs a step and a classifier call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .classifiers.base import BaseClassifier
from .core import EPISODE_STREAM, NOISE_STREAM, apply_mask, derive_seed, make_rng, pool_channels
from .errors import ContractViolation
from .models import DeletionTrace, GridMask, GridSpec, ImageTensor

logger = logging.getLogger(__name__)

# An observation is a flat float vector: pooled masked image in [0, 1],
# followed by a one-hot class block for dataset-scoped agents.
Observation = np.ndarray


@dataclass(frozen=True)
class EncoderConfig:
    pool: int = 28
    num_classes: Optional[int] = None

    def width(self, channels: int) -> int:
        return self.pool * self.pool * channels + (self.num_classes or 0)


@dataclass(eq=False)
class EnvState:
    image: ImageTensor
    mask: GridMask
    current: ImageTensor
    t: int
    class_index: int
    scores: List[float]
    seed: int

    @property
    def grid(self) -> GridSpec:
        return self.mask.grid

    @property
    def done(self) -> bool:
        return self.t == self.grid.n_cells

    @property
    def last_score(self) -> float:
        return self.scores[-1]


@dataclass
class StepOutcome:
    state: EnvState
    reward: float
    done: bool
    delta: float


@dataclass
class Transition:
    observation: Observation
    action: int
    reward: float
    next_observation: Observation
    done: bool
    behavior_prob: float

    def __post_init__(self) -> None:
        if not -1.0 <= self.reward <= 0.0:
            raise ContractViolation(f"reward {self.reward} outside [-1, 0]")
        if not 0.0 < self.behavior_prob <= 1.0:
            raise ContractViolation(f"behavior probability {self.behavior_prob} outside (0, 1]")


class MaskingEnv:
    """
    Functional reset/step environment around one classifier.

    `calls` counts every classifier call made through this environment.
    """

    def __init__(self, classifier: BaseClassifier, k: int = 7, encoder: Optional[EncoderConfig] = None):
        if k < 1:
            raise ContractViolation("k must be ≥ 1")
        self.classifier = classifier
        self.k = k
        self.encoder = encoder or EncoderConfig()
        self.calls = 0

    @property
    def n_actions(self) -> int:
        return self.k * self.k

    def _score(self, image: ImageTensor, class_index: int) -> float:
        self.calls += 1
        return self.classifier.score(image)[class_index]

    def reset(self, image: ImageTensor, class_index: int, seed: int) -> EnvState:
        if not 0 <= class_index < self.classifier.num_classes:
            raise ContractViolation(
                f"class {class_index} outside [0, {self.classifier.num_classes})"
            )
        grid = GridSpec.for_image(self.k, image)
        mask = GridMask.empty(grid, derive_seed(seed, NOISE_STREAM))
        p0 = self._score(image, class_index)
        return EnvState(image, mask, image, 0, class_index, [p0], int(seed))

    def step(self, state: EnvState, action: int) -> StepOutcome:
        if state.done:
            raise ContractViolation("step called on a finished episode")
        if not 0 <= int(action) < state.grid.n_cells:
            raise ContractViolation(f"action {action} outside [0, {state.grid.n_cells})")
        mask = state.mask.with_cells(int(action))
        current = apply_mask(state.image, mask)
        p = self._score(current, state.class_index)
        nxt = EnvState(
            state.image, mask, current, state.t + 1, state.class_index, state.scores + [p], state.seed
        )
        return StepOutcome(nxt, -p, nxt.done, state.last_score - p)

    def observe(self, state: EnvState) -> Observation:
        enc = self.encoder
        grid = GridSpec(enc.pool, state.image.height, state.image.width)
        lo, hi = state.image.value_range
        pooled = (pool_channels(state.current.data, grid) - lo) / (hi - lo)
        feats = pooled.reshape(-1)
        if enc.num_classes:
            onehot = np.zeros(enc.num_classes)
            onehot[state.class_index] = 1.0
            feats = np.concatenate([feats, onehot])
        return feats


class Policy(Protocol):
    def act(self, observation: Observation, state: EnvState) -> Tuple[int, float]:
        """Return (action, probability the policy assigned to it)."""
        ...


def _unmasked(state: EnvState) -> np.ndarray:
    return np.flatnonzero(~state.mask.occupied.reshape(-1))


class RandomPolicy:
    """Uniform over unmasked cells."""

    def __init__(self, seed: int = 0):
        self.rng = make_rng(seed, EPISODE_STREAM)

    def act(self, observation: Observation, state: EnvState) -> Tuple[int, float]:
        free = _unmasked(state)
        return int(self.rng.choice(free)), 1.0 / len(free)


class ReferenceOrderPolicy:
    """Masks cells in a fixed order, then the lowest unmasked index."""

    def __init__(self, order: Sequence[int]):
        self.order = [int(c) for c in order]

    def act(self, observation: Observation, state: EnvState) -> Tuple[int, float]:
        for cell in self.order:
            if not state.mask.is_occupied(cell):
                return cell, 1.0
        return int(_unmasked(state)[0]), 1.0


class EpsilonReferencePolicy:
    """Follows a reference order with probability 1 − ε, else a random unmasked cell."""

    def __init__(self, order: Sequence[int], epsilon: float, seed: int = 0):
        if not 0.0 <= epsilon <= 1.0:
            raise ContractViolation("epsilon must lie in [0, 1]")
        self.reference = ReferenceOrderPolicy(order)
        self.epsilon = epsilon
        self.rng = make_rng(seed, EPISODE_STREAM)

    def act(self, observation: Observation, state: EnvState) -> Tuple[int, float]:
        free = _unmasked(state)
        ref_action, _ = self.reference.act(observation, state)
        explore = self.rng.random() < self.epsilon
        action = int(self.rng.choice(free)) if explore else ref_action
        prob = self.epsilon / len(free) + (1.0 - self.epsilon) * (action == ref_action)
        return action, prob


@dataclass(eq=False)
class Trajectory:
    """One complete episode; `observations` holds s_0 … s_T."""
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_probs: np.ndarray
    image_id: Optional[str] = None
    class_index: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.actions.size)

    def transitions(self) -> List[Transition]:
        T = len(self)
        return [
            Transition(
                self.observations[t],
                int(self.actions[t]),
                float(self.rewards[t]),
                self.observations[t + 1],
                t == T - 1,
                float(self.behavior_probs[t]),
            )
            for t in range(T)
        ]


def rollout(
    env: MaskingEnv,
    policy: Policy,
    image: ImageTensor,
    class_index: int,
    seed: int,
    image_id: Optional[str] = None,
) -> Tuple[Trajectory, DeletionTrace]:
    """Run one full episode, recording observations for training."""
    state = env.reset(image, class_index, seed)
    obs = [env.observe(state)]
    actions, rewards, probs = [], [], []
    while not state.done:
        action, prob = policy.act(obs[-1], state)
        outcome = env.step(state, action)
        state = outcome.state
        actions.append(action)
        rewards.append(outcome.reward)
        probs.append(prob)
        obs.append(env.observe(state))
    trajectory = Trajectory(
        np.vstack(obs),
        np.asarray(actions, dtype=np.int64),
        np.asarray(rewards, dtype=np.float64),
        np.asarray(probs, dtype=np.float64),
        image_id,
        class_index,
    )
    return trajectory, DeletionTrace.from_scores(actions, state.scores, env.k)


def run_episode(
    env: MaskingEnv, policy: Policy, image: ImageTensor, class_index: int, seed: int
) -> DeletionTrace:
    """Exactly k² steps and k² + 1 classifier calls."""
    state = env.reset(image, class_index, seed)
    actions = []
    while not state.done:
        action, _ = policy.act(env.observe(state), state)
        state = env.step(state, action).state
        actions.append(action)
    return DeletionTrace.from_scores(actions, state.scores, env.k)
