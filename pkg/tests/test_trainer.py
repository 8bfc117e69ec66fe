"""Tests for actor-critic updates, episode sources and the training loop."""

import numpy as np
import pytest

from rexl.classifiers import BaseClassifier, ConstantClassifier
from rexl.environment import Trajectory
from rexl.errors import ConfigError, TrainingError, TransportTimeout
from rexl.models import ImageTensor
from rexl.policy import forward_batch, init_params, softmax
from rexl.synthetic import planted_oracle_family
from rexl.trainer import (
    LOG_COLUMNS,
    RMSProp,
    DatasetEpisodes,
    EpisodeSpec,
    OracleFamilyEpisodes,
    ReplayBuffer,
    TrainConfig,
    UpdateBatch,
    actor_critic_update,
    clip_by_global_norm,
    compute_returns_and_advantages,
    loss_and_gradients,
    train,
)


def _trajectory(rewards, width=2, action=0, prob=0.5):
    n = len(rewards)
    return Trajectory(
        np.linspace(0.0, 1.0, (n + 1) * width).reshape(n + 1, width),
        np.full(n, action, dtype=np.int64),
        np.asarray(rewards, dtype=np.float64),
        np.full(n, prob),
    )


@pytest.fixture
def oracles():
    return planted_oracle_family(3, size=28, k=7, tolerance=0.2, seed=0)


@pytest.fixture
def small_config():
    # 2 episodes per update on a 7×7 grid
    return TrainConfig(total_steps=196, steps_per_update=98, hidden=(16,), learning_rate=1e-3, seed=0)


def _same_params(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


class TestReturns:
    """Test Monte-Carlo returns and advantages."""

    def test_undiscounted_returns(self):
        """Test γ = 1 gives suffix sums of rewards."""
        params = init_params(2, n_actions=4, hidden=(3,), k=2, seed=0)
        traj = _trajectory([-0.5, -0.2, -0.1])
        returns, advantages = compute_returns_and_advantages(traj, params)
        assert np.allclose(returns, [-0.8, -0.3, -0.1])
        values = forward_batch(params, traj.observations[:3]).values
        assert np.allclose(advantages, returns - values)

    def test_discounted_returns(self):
        """Test γ = 0.5."""
        params = init_params(2, n_actions=4, hidden=(3,), k=2, seed=0)
        returns, _ = compute_returns_and_advantages(_trajectory([-0.5, -0.2, -0.1]), params, gamma=0.5)
        assert np.allclose(returns, [-0.625, -0.25, -0.1])


class TestGradients:
    """Test the hand-written backward pass."""

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        """Test every parameter array against central differences."""
        rng = np.random.default_rng(seed)
        hidden = [(), (4,), (4, 3), (5, 2)][seed % 4]
        n_actions = 3 + seed % 3
        width = 2 + seed % 2
        base = init_params(width, n_actions=n_actions, hidden=hidden, seed=seed, k=None)
        params = base.with_arrays([a + rng.normal(scale=0.3, size=a.shape) for a in base.arrays()])
        batch = UpdateBatch(
            observations=rng.uniform(size=(6, width)),
            actions=rng.integers(n_actions, size=6),
            returns=rng.uniform(-1.0, 0.0, size=6),
            advantages=rng.normal(size=6),
            weights=rng.uniform(0.5, 2.0, size=6),
        )
        config = TrainConfig(value_coef=0.7, entropy_coef=0.05)
        _, grads, _ = loss_and_gradients(params, batch, config)
        arrays = params.arrays()
        eps = 1e-6
        for i, array in enumerate(arrays):
            numeric = np.zeros_like(array)
            for idx in np.ndindex(array.shape):
                plus = [a.copy() for a in arrays]
                minus = [a.copy() for a in arrays]
                plus[i][idx] += eps
                minus[i][idx] -= eps
                lp, _, _ = loss_and_gradients(params.with_arrays(plus), batch, config)
                lm, _, _ = loss_and_gradients(params.with_arrays(minus), batch, config)
                numeric[idx] = (lp - lm) / (2 * eps)
            scale = np.linalg.norm(numeric) + np.linalg.norm(grads[i])
            assert np.linalg.norm(numeric - grads[i]) <= 1e-4 * scale + 1e-8, f"array {i} of {hidden}"

    def test_global_norm_clip(self):
        """Test gradients above the norm are rescaled."""
        clipped, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == pytest.approx(5.0)
        assert np.allclose([clipped[0][0], clipped[1][0]], [0.6, 0.8])


class TestUpdates:
    """Test whole update steps."""

    def test_non_finite_loss_raises(self):
        """Test NaN rewards surface as TrainingError."""
        params = init_params(2, n_actions=4, hidden=(3,), k=2, seed=0)
        with pytest.raises(TrainingError):
            actor_critic_update(params, [_trajectory([np.nan, -0.1])], TrainConfig())

    def test_empty_batch_rejected(self):
        """Test an update needs episodes."""
        params = init_params(2, n_actions=4, hidden=(3,), k=2, seed=0)
        with pytest.raises(ValueError):
            actor_critic_update(params, [], TrainConfig())

    def test_replayed_episodes_weighted(self):
        """Test replay weights are clipped importance ratios."""
        params = init_params(2, n_actions=4, hidden=(3,), k=2, seed=0)
        fresh = _trajectory([-0.5])
        old = _trajectory([-0.5], prob=0.01)
        batch = UpdateBatch.from_trajectories(params, [fresh], [old], importance_clip=10.0)
        # uniform policy: π = 0.25, ρ = min(10, 0.25 / 0.01)
        assert batch.weights.tolist() == [1.0, 10.0]

    @pytest.mark.parametrize("seed", range(10))
    def test_two_action_bandit_converges(self, seed):
        """Test the good arm of a 2-action bandit wins after a few hundred updates."""
        params = init_params(1, n_actions=2, hidden=(), seed=seed, k=None)
        config = TrainConfig(learning_rate=1e-2, seed=seed)
        optimizer = RMSProp(config.learning_rate, config.rms_alpha, config.rms_eps)
        rng = np.random.default_rng(seed)
        obs = np.ones((2, 1))
        for _ in range(500):
            probs = softmax(forward_batch(params, obs[:1]).logits)[0]
            batch = []
            for _ in range(16):
                a = int(rng.random() >= probs[0])
                batch.append(
                    Trajectory(obs, np.array([a]), np.array([0.0 if a == 0 else -1.0]), np.array([probs[a]]))
                )
            params, _ = actor_critic_update(params, batch, config, optimizer)
        assert forward_batch(params, obs[:1]).probs[0, 0] > 0.9


class FlakyClassifier(BaseClassifier):
    """Fails the first `failures` calls with a transport timeout."""

    def __init__(self, inner, failures):
        self.inner = inner
        self.failures = failures
        self.num_classes = inner.num_classes
        self.input_shape = inner.input_shape

    def _score(self, image):
        if self.failures > 0:
            self.failures -= 1
            raise TransportTimeout("simulated")
        return self.inner.score(image)


class SingleImageEpisodes:
    scope = "CS"
    class_index = 0
    num_classes = 1
    input_shape = (28, 28, 1)

    def __init__(self, classifier):
        self.classifier = classifier
        self.image = ImageTensor(np.full((28, 28, 1), 0.5))

    def sample(self, rng):
        return EpisodeSpec(self.image, 0, "only", self.classifier)


class TestTraining:
    """Test the training loop."""

    def test_runs_and_logs(self, tmp_path, oracles, small_config):
        """Test step accounting and the CSV log."""
        log_path = tmp_path / "train_log.csv"
        result = train(OracleFamilyEpisodes(oracles), small_config, k=7, pool=7, log_path=log_path)
        assert result.updates == 2
        assert result.env_steps == 196
        assert list(result.log.columns) == LOG_COLUMNS
        assert log_path.exists()
        assert result.seen_classes == {0}
        assert result.seen_image_ids <= {"oracle-0000", "oracle-0001", "oracle-0002"}
        assert result.params.k == 7 and result.params.pool == 7

    def test_reproducible(self, oracles, small_config):
        """Test the same seed gives identical parameters."""
        a = train(OracleFamilyEpisodes(oracles), small_config, k=7, pool=7)
        b = train(OracleFamilyEpisodes(oracles), small_config, k=7, pool=7)
        assert _same_params(a.params, b.params)

    def test_thread_count_does_not_change_result(self, oracles, small_config):
        """Test parallel rollout collection is deterministic."""
        a = train(OracleFamilyEpisodes(oracles), small_config, k=7, pool=7)
        small_config.n_jobs = 2
        b = train(OracleFamilyEpisodes(oracles), small_config, k=7, pool=7)
        assert _same_params(a.params, b.params)

    def test_resume_matches_uninterrupted_run(self, tmp_path, oracles):
        """Test a resumed run equals one that never stopped."""
        common = dict(steps_per_update=98, hidden=(16,), learning_rate=1e-3, seed=0, replay_size=8, replay_batch=2)
        full = train(OracleFamilyEpisodes(oracles), TrainConfig(total_steps=392, **common), k=7, pool=7)

        checkpoint = tmp_path / "checkpoint.json"
        train(
            OracleFamilyEpisodes(oracles), TrainConfig(total_steps=196, **common),
            k=7, pool=7, checkpoint_path=checkpoint,
        )
        assert checkpoint.exists()
        resumed = train(
            OracleFamilyEpisodes(oracles), TrainConfig(total_steps=392, **common),
            k=7, pool=7, checkpoint_path=checkpoint, resume=True,
        )
        assert _same_params(full.params, resumed.params)
        assert len(resumed.log) == 4

    def test_resume_needs_checkpoint_path(self, oracles, small_config):
        """Test resume without a path is a config error."""
        with pytest.raises(ConfigError):
            train(OracleFamilyEpisodes(oracles), small_config, resume=True)

    def test_transport_failures_retried(self, small_config):
        """Test a transient classifier failure is retried."""
        flaky = FlakyClassifier(ConstantClassifier([0.5], (28, 28, 1)), failures=1)
        small_config.max_retries = 1
        result = train(SingleImageEpisodes(flaky), small_config, k=7, pool=7)
        assert result.updates == 2

    def test_transport_failures_exhaust_retries(self, small_config):
        """Test persistent failures propagate."""
        flaky = FlakyClassifier(ConstantClassifier([0.5], (28, 28, 1)), failures=10)
        small_config.max_retries = 1
        with pytest.raises(TransportTimeout):
            train(SingleImageEpisodes(flaky), small_config, k=7, pool=7)


class TestEpisodeSources:
    """Test scope handling of episode factories."""

    @pytest.fixture
    def dataset(self):
        images = [ImageTensor(np.full((28, 28, 1), v)) for v in (0.1, 0.2, 0.3, 0.4)]
        return images, [0, 1, 0, 1], ["a", "b", "c", "d"], ConstantClassifier([0.5, 0.5], (28, 28, 1))

    def test_class_scope_draws_one_class(self, dataset):
        """Test CS only samples images of its class."""
        images, labels, ids, clf = dataset
        factory = DatasetEpisodes(images, labels, ids, clf, "CS", class_index=1)
        rng = np.random.default_rng(0)
        assert {factory.sample(rng).image_id for _ in range(20)} <= {"b", "d"}

    def test_image_scope(self, dataset):
        """Test IS always returns its image with that image's label."""
        images, labels, ids, clf = dataset
        factory = DatasetEpisodes(images, labels, ids, clf, "IS", image_id="c")
        spec = factory.sample(np.random.default_rng(0))
        assert (spec.image_id, spec.class_index) == ("c", 0)

    def test_dataset_scope_uses_labels(self, dataset):
        """Test DS targets each image's own label."""
        images, labels, ids, clf = dataset
        factory = DatasetEpisodes(images, labels, ids, clf, "DS")
        rng = np.random.default_rng(1)
        for _ in range(10):
            spec = factory.sample(rng)
            assert spec.class_index == labels[ids.index(spec.image_id)]

    def test_scope_errors(self, dataset):
        """Test missing scope arguments are config errors."""
        images, labels, ids, clf = dataset
        with pytest.raises(ConfigError):
            DatasetEpisodes(images, labels, ids, clf, "CS")
        with pytest.raises(ConfigError):
            DatasetEpisodes(images, labels, ids, clf, "IS", image_id="zz")

    def test_replay_buffer_save_load(self, tmp_path):
        """Test replay contents persist."""
        buffer = ReplayBuffer(3)
        buffer.extend([_trajectory([-0.1, -0.2]) for _ in range(4)])
        assert len(buffer) == 3
        path = tmp_path / "replay.npz"
        buffer.save(path)
        other = ReplayBuffer(3)
        other.load(path)
        assert len(other) == 3
        assert np.array_equal(other.episodes[0].rewards, [-0.1, -0.2])
