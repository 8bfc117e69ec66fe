"""
Advantage actor-critic training for the masking agent.

The loss over a batch of complete episodes is

    L = −Σ_t ρ_t·A_t·log π(a_t|s_t) + c_v·Σ_t (G_t − V(s_t))² − c_e·Σ_t H(π(·|s_t))

with Monte-Carlo returns G_t, advantages A_t = G_t − V(s_t) held constant,
ρ_t = 1 for fresh episodes and min(clip, π/μ) for replayed ones. Gradients
are computed by hand and applied with RMSProp after a global-norm clip.

Every episode draws its randomness from streams derived from
(seed, episode index), so a run is reproducible and resumable from a
checkpoint regardless of how many worker threads collect rollouts.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .classifiers.base import BaseClassifier
from .core import EPISODE_STREAM, POLICY_STREAM, REPLAY_STREAM, derive_seed, make_rng
from .environment import MaskingEnv, Trajectory, rollout
from .errors import ConfigError, ContractViolation, TrainingError, TransportError
from .models import ImageTensor
from .policy import (
    LOG_FLOOR,
    PolicyParams,
    SamplingPolicy,
    forward_batch,
    init_params,
    params_from_dict,
    params_to_dict,
)
from .storage import load_versioned, save_json

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rexl-checkpoint/1"
LOG_COLUMNS = ["step", "mean_return", "policy_loss", "value_loss", "entropy"]


@dataclass
class TrainConfig:
    total_steps: int = 2_000_000
    steps_per_update: int = 490
    value_coef: float = 1.0
    rms_alpha: float = 0.9
    rms_eps: float = 1e-5
    learning_rate: float = 1e-4
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    replay_size: Optional[int] = None
    replay_batch: int = 4
    importance_clip: float = 10.0
    hidden: Tuple[int, ...] = (256, 128)
    gamma: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    max_retries: int = 3
    n_jobs: int = 1

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.total_steps < 1 or self.steps_per_update < 1:
            raise ConfigError("step counts must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if not 0.0 <= self.rms_alpha < 1.0:
            raise ConfigError("rms_alpha must lie in [0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.replay_size is not None and self.replay_size < 1:
            raise ConfigError("replay_size must be positive when set")
        if self.max_retries < 0 or self.n_jobs < 1 or self.checkpoint_every < 0:
            raise ConfigError("max_retries, n_jobs and checkpoint_every must be non-negative")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def episodes_per_update(self, n_cells: int) -> int:
        return math.ceil(self.steps_per_update / n_cells)


def compute_returns_and_advantages(
    trajectory: Trajectory, params: PolicyParams, gamma: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-step returns G_t = Σ_{i≥t} γ^{i−t} r_{i+1} and advantages G_t − V(s_t)."""
    gamma = params.gamma if gamma is None else float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation(f"gamma must lie in [0, 1], got {gamma}")
    rewards = trajectory.rewards
    returns = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    values = forward_batch(params, trajectory.observations[: rewards.size]).values
    return returns, returns - values


@dataclass
class UpdateBatch:
    observations: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_trajectories(
        cls,
        params: PolicyParams,
        trajectories: Sequence[Trajectory],
        replayed: Sequence[Trajectory] = (),
        importance_clip: float = 10.0,
        gamma: Optional[float] = None,
    ) -> "UpdateBatch":
        obs, acts, rets, advs, wts = [], [], [], [], []
        for traj, is_replay in [(t, False) for t in trajectories] + [(t, True) for t in replayed]:
            G, A = compute_returns_and_advantages(traj, params, gamma)
            states = traj.observations[: len(traj)]
            if is_replay:
                probs = forward_batch(params, states).probs[np.arange(len(traj)), traj.actions]
                rho = np.minimum(importance_clip, probs / traj.behavior_probs)
            else:
                rho = np.ones(len(traj))
            obs.append(states)
            acts.append(traj.actions)
            rets.append(G)
            advs.append(A)
            wts.append(rho)
        return cls(np.vstack(obs), np.concatenate(acts), np.concatenate(rets), np.concatenate(advs), np.concatenate(wts))


def loss_and_gradients(
    params: PolicyParams, batch: UpdateBatch, config: TrainConfig
) -> Tuple[float, List[np.ndarray], Dict[str, float]]:
    """Loss, gradients aligned with ``params.arrays()``, and diagnostics."""
    cache = forward_batch(params, batch.observations)
    n = batch.actions.size
    rows = np.arange(n)
    probs = cache.probs
    logp = np.log(np.maximum(probs, LOG_FLOOR))
    entropy = -(probs * logp).sum(axis=1)
    coef = batch.weights * batch.advantages
    value_err = batch.returns - cache.values

    policy_loss = float(-np.sum(coef * logp[rows, batch.actions]))
    value_loss = float(np.sum(value_err**2))
    entropy_sum = float(entropy.sum())
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy_sum

    dz = coef[:, None] * probs
    dz[rows, batch.actions] -= coef
    dz += config.entropy_coef * probs * (logp + entropy[:, None])
    dv = (-2.0 * config.value_coef * value_err)[:, None]

    h = cache.activations[-1] if params.hidden else batch.observations
    wp, _ = params.policy_head
    wv, _ = params.value_head
    head_grads = [h.T @ dz, dz.sum(axis=0), h.T @ dv, dv.sum(axis=0)]

    hidden_grads: List[np.ndarray] = []
    dh = dz @ wp.T + dv @ wv.T
    for i in range(len(params.hidden) - 1, -1, -1):
        w, _ = params.hidden[i]
        dh = dh * (cache.activations[i] > 0)
        hidden_grads = [cache.inputs[i].T @ dh, dh.sum(axis=0)] + hidden_grads
        dh = dh @ w.T

    diagnostics = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_sum / max(n, 1),
        "steps": float(n),
    }
    return loss, hidden_grads + head_grads, diagnostics


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


class RMSProp:
    """RMSProp with smoothing `alpha`: ms ← α·ms + (1 − α)·g²."""

    def __init__(self, learning_rate: float, alpha: float = 0.9, eps: float = 1e-5):
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.eps = eps
        self.ms: Optional[List[np.ndarray]] = None

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> List[np.ndarray]:
        if self.ms is None:
            self.ms = [np.zeros_like(a) for a in arrays]
        out = []
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.ms[i] = self.alpha * self.ms[i] + (1.0 - self.alpha) * g * g
            out.append(a - self.learning_rate * g / (np.sqrt(self.ms[i]) + self.eps))
        return out

    def state_dict(self) -> Dict[str, Any]:
        ms = self.ms or []
        return {"ms": [{"shape": list(m.shape), "values": [float(x) for x in m.ravel()]} for m in ms]}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        ms = [np.asarray(e["values"], dtype=np.float64).reshape(e["shape"]) for e in state.get("ms", [])]
        self.ms = ms or None


def actor_critic_update(
    params: PolicyParams,
    trajectories: Sequence[Trajectory],
    config: TrainConfig,
    optimizer: Optional[RMSProp] = None,
    replayed: Sequence[Trajectory] = (),
) -> Tuple[PolicyParams, Dict[str, float]]:
    """One gradient step on a batch of complete episodes."""
    if not trajectories:
        raise ContractViolation("actor-critic update needs a non-empty batch")
    batch = UpdateBatch.from_trajectories(
        params, trajectories, replayed, config.importance_clip, config.gamma
    )
    loss, grads, diagnostics = loss_and_gradients(params, batch, config)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError("non-finite loss or gradient", diagnostics)
    grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
    diagnostics["grad_norm"] = norm
    optimizer = optimizer or RMSProp(config.learning_rate, config.rms_alpha, config.rms_eps)
    return params.with_arrays(optimizer.step(params.arrays(), grads)), diagnostics


@dataclass(frozen=True, eq=False)
class EpisodeSpec:
    image: ImageTensor
    class_index: int
    image_id: str
    classifier: BaseClassifier


class EpisodeFactory(Protocol):
    scope: str
    class_index: Optional[int]
    num_classes: int
    input_shape: Tuple[int, int, int]

    def sample(self, rng: np.random.Generator) -> EpisodeSpec:
        ...


class DatasetEpisodes:
    """
    Episodes drawn from a labelled image set under one classifier.

    IS scope trains on a single image, CS on the images of one class and DS
    on the whole set.
    """

    def __init__(
        self,
        images: Sequence[ImageTensor],
        labels: Sequence[int],
        image_ids: Sequence[str],
        classifier: BaseClassifier,
        scope: str = "CS",
        class_index: Optional[int] = None,
        image_id: Optional[str] = None,
    ):
        if not len(images) == len(labels) == len(image_ids):
            raise ContractViolation("images, labels and ids differ in length")
        self.images = list(images)
        self.labels = [int(y) for y in labels]
        self.image_ids = list(image_ids)
        self.classifier = classifier
        self.scope = scope
        self.num_classes = classifier.num_classes
        self.input_shape = tuple(classifier.input_shape)
        if scope == "IS":
            if image_id not in self.image_ids:
                raise ConfigError(f"image {image_id!r} not in the dataset")
            self.pool = [self.image_ids.index(image_id)]
            self.class_index = self.labels[self.pool[0]] if class_index is None else class_index
        elif scope == "CS":
            if class_index is None:
                raise ConfigError("class scope needs a class index")
            self.pool = [i for i, y in enumerate(self.labels) if y == class_index]
            self.class_index = class_index
        elif scope == "DS":
            self.pool = list(range(len(self.images)))
            self.class_index = None
        else:
            raise ConfigError(f"unknown scope {scope!r}")
        if not self.pool:
            raise ConfigError(f"no training images for scope {scope} class {class_index}")

    def sample(self, rng: np.random.Generator) -> EpisodeSpec:
        i = self.pool[int(rng.integers(len(self.pool)))]
        target = self.labels[i] if self.scope != "IS" or self.class_index is None else self.class_index
        return EpisodeSpec(self.images[i], target, self.image_ids[i], self.classifier)


class OracleFamilyEpisodes:
    """Episodes over a family of planted oracles, each scoring its own reference."""

    scope = "CS"

    def __init__(self, oracles: Sequence[Any], ids: Optional[Sequence[str]] = None):
        if not oracles:
            raise ConfigError("oracle family is empty")
        self.oracles = list(oracles)
        self.ids = list(ids) if ids is not None else [f"oracle-{i:04d}" for i in range(len(self.oracles))]
        first = self.oracles[0]
        self.class_index = first.config.target_class
        self.num_classes = first.num_classes
        self.input_shape = tuple(first.input_shape)

    def sample(self, rng: np.random.Generator) -> EpisodeSpec:
        i = int(rng.integers(len(self.oracles)))
        oracle = self.oracles[i]
        return EpisodeSpec(oracle.config.reference_image, oracle.config.target_class, self.ids[i], oracle)


class ReplayBuffer:
    """Uniform replay over complete episodes."""

    def __init__(self, capacity: int):
        self.episodes: Deque[Trajectory] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.episodes)

    def extend(self, trajectories: Sequence[Trajectory]) -> None:
        self.episodes.extend(trajectories)

    def sample(self, rng: np.random.Generator, n: int) -> List[Trajectory]:
        if not self.episodes:
            return []
        idx = rng.integers(len(self.episodes), size=n)
        return [self.episodes[int(i)] for i in idx]

    def save(self, path: Path | str) -> None:
        arrays: Dict[str, np.ndarray] = {}
        for i, t in enumerate(self.episodes):
            arrays[f"obs_{i}"] = t.observations
            arrays[f"act_{i}"] = t.actions
            arrays[f"rew_{i}"] = t.rewards
            arrays[f"prob_{i}"] = t.behavior_probs
            arrays[f"cls_{i}"] = np.array([t.class_index])
        np.savez_compressed(path, count=np.array([len(self.episodes)]), **arrays)

    def load(self, path: Path | str) -> None:
        with np.load(path) as data:
            count = int(data["count"][0])
            self.episodes.clear()
            for i in range(count):
                self.episodes.append(
                    Trajectory(
                        data[f"obs_{i}"],
                        data[f"act_{i}"],
                        data[f"rew_{i}"],
                        data[f"prob_{i}"],
                        None,
                        int(data[f"cls_{i}"][0]),
                    )
                )


@dataclass
class TrainResult:
    params: PolicyParams
    log: pd.DataFrame
    env_steps: int
    updates: int
    seen_image_ids: Set[str] = field(default_factory=set)
    seen_classes: Set[int] = field(default_factory=set)


def _collect_episode(
    factory: EpisodeFactory, params: PolicyParams, config: TrainConfig, episode_index: int
) -> Trajectory:
    spec = factory.sample(make_rng(config.seed, EPISODE_STREAM, episode_index))
    env_seed = derive_seed(config.seed, EPISODE_STREAM, episode_index)
    for attempt in range(config.max_retries + 1):
        env = MaskingEnv(spec.classifier, params.k, params.encoder)
        policy = SamplingPolicy(params, make_rng(config.seed, POLICY_STREAM, episode_index))
        try:
            trajectory, _ = rollout(env, policy, spec.image, spec.class_index, env_seed, spec.image_id)
            return trajectory
        except TransportError as exc:
            if attempt == config.max_retries:
                raise
            logger.warning(
                "episode %d: classifier transport failed (%s), retry %d/%d",
                episode_index, exc, attempt + 1, config.max_retries,
            )
    raise AssertionError("unreachable")


def _checkpoint_paths(path: Path | str) -> Tuple[Path, Path]:
    p = Path(path)
    return p, p.with_suffix(".replay.npz")


def save_checkpoint(
    path: Path | str,
    params: PolicyParams,
    optimizer: RMSProp,
    update: int,
    env_steps: int,
    log_rows: List[Dict[str, float]],
    seen_ids: Set[str],
    seen_classes: Set[int],
    replay: Optional[ReplayBuffer],
    config: TrainConfig,
) -> None:
    json_path, replay_path = _checkpoint_paths(path)
    if replay is not None:
        replay_path.parent.mkdir(parents=True, exist_ok=True)
        replay.save(replay_path)
    save_json(
        json_path,
        {
            "format": CHECKPOINT_FORMAT,
            "agent": params_to_dict(params),
            "optimizer": optimizer.state_dict(),
            "update": update,
            "env_steps": env_steps,
            "log": log_rows,
            "seen_image_ids": sorted(seen_ids),
            "seen_classes": sorted(seen_classes),
            "config": asdict(config),
        },
    )
    logger.info("checkpoint saved at update %d (%d env steps) to %s", update, env_steps, json_path)


def train(
    factory: EpisodeFactory,
    config: TrainConfig,
    *,
    k: int = 7,
    pool: int = 28,
    params: Optional[PolicyParams] = None,
    checkpoint_path: Optional[Path | str] = None,
    resume: bool = False,
    log_path: Optional[Path | str] = None,
) -> TrainResult:
    """
    Train a policy on episodes from `factory`.

    Updates happen every ⌈steps_per_update / k²⌉ episodes. With
    `checkpoint_path` set, a checkpoint is written every
    `config.checkpoint_every` updates and after the last one; with
    `resume=True` training continues from that checkpoint and produces the
    same parameters as an uninterrupted run.
    """
    n_cells = k * k
    episodes_per_update = config.episodes_per_update(n_cells)
    total_updates = math.ceil(config.total_steps / (episodes_per_update * n_cells))
    optimizer = RMSProp(config.learning_rate, config.rms_alpha, config.rms_eps)
    replay = ReplayBuffer(config.replay_size) if config.replay_size else None
    log_rows: List[Dict[str, float]] = []
    seen_ids: Set[str] = set()
    seen_classes: Set[int] = set()
    start = 0

    if resume:
        if checkpoint_path is None:
            raise ConfigError("resume requested without a checkpoint path")
        json_path, replay_path = _checkpoint_paths(checkpoint_path)
        state = load_versioned(json_path, CHECKPOINT_FORMAT)
        params = params_from_dict(state["agent"])
        optimizer.load_state_dict(state["optimizer"])
        start = int(state["update"])
        log_rows = list(state["log"])
        seen_ids = set(state["seen_image_ids"])
        seen_classes = set(state["seen_classes"])
        if replay is not None and replay_path.exists():
            replay.load(replay_path)
        logger.info("resuming from update %d of %d", start, total_updates)
    elif params is None:
        c = factory.input_shape[2]
        num_classes = factory.num_classes if factory.scope == "DS" else None
        width = pool * pool * c + (num_classes or 0)
        params = init_params(
            width,
            n_cells,
            config.hidden,
            seed=config.seed,
            scope=factory.scope,
            class_index=factory.class_index,
            gamma=config.gamma,
            k=k,
            pool=pool,
            num_classes=num_classes,
        )

    for update in range(start, total_updates):
        first = update * episodes_per_update
        indices = range(first, first + episodes_per_update)
        if config.n_jobs > 1:
            trajectories = Parallel(n_jobs=config.n_jobs, prefer="threads")(
                delayed(_collect_episode)(factory, params, config, i) for i in indices
            )
        else:
            trajectories = [_collect_episode(factory, params, config, i) for i in indices]

        replayed: List[Trajectory] = []
        if replay is not None:
            replayed = replay.sample(make_rng(config.seed, REPLAY_STREAM, update), config.replay_batch)
        params, diag = actor_critic_update(params, trajectories, config, optimizer, replayed)
        if replay is not None:
            replay.extend(trajectories)

        for t in trajectories:
            seen_ids.add(t.image_id)
            seen_classes.add(int(t.class_index))
        env_steps = (update + 1) * episodes_per_update * n_cells
        log_rows.append(
            {
                "step": env_steps,
                "mean_return": float(np.mean([t.rewards.sum() for t in trajectories])),
                "policy_loss": diag["policy_loss"],
                "value_loss": diag["value_loss"],
                "entropy": diag["entropy"],
            }
        )
        if (update + 1) % 10 == 0 or update + 1 == total_updates:
            logger.info(
                "update %d/%d: %d env steps, mean return %.4f, entropy %.4f",
                update + 1, total_updates, env_steps, log_rows[-1]["mean_return"], diag["entropy"],
            )
        last = update + 1 == total_updates
        every = config.checkpoint_every and (update + 1) % config.checkpoint_every == 0
        if checkpoint_path is not None and (every or last):
            save_checkpoint(
                checkpoint_path, params, optimizer, update + 1, env_steps,
                log_rows, seen_ids, seen_classes, replay, config,
            )

    log = pd.DataFrame(log_rows, columns=LOG_COLUMNS)
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(log_path, index=False)
    params.extra.update({"seed": config.seed, "env_steps": total_updates * episodes_per_update * n_cells})
    return TrainResult(
        params, log, total_updates * episodes_per_update * n_cells, total_updates, seen_ids, seen_classes
    )
