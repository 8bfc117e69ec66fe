"""Tests for the sequential masking environment and rollout policies."""

import numpy as np
import pytest

from rexl.classifiers import CountingClassifier
from rexl.environment import (
    EncoderConfig,
    EpsilonReferencePolicy,
    MaskingEnv,
    RandomPolicy,
    ReferenceOrderPolicy,
    rollout,
    run_episode,
)
from rexl.errors import ContractViolation


@pytest.fixture
def env(linear_oracle):
    return MaskingEnv(linear_oracle, k=7, encoder=EncoderConfig(pool=7))


@pytest.fixture
def reference(linear_oracle):
    return linear_oracle.config.reference_image


class TestReset:
    """Test episode start."""

    def test_initial_state(self, env, reference):
        """Test reset scores the clean image once."""
        state = env.reset(reference, 0, seed=3)
        assert state.t == 0
        assert state.mask.count == 0
        assert state.scores == [pytest.approx(1.0)]
        assert env.calls == 1

    def test_class_out_of_range(self, env, reference):
        """Test the target class is validated."""
        with pytest.raises(ContractViolation):
            env.reset(reference, 1, seed=0)


class TestStep:
    """Test single transitions."""

    def test_reward_is_negative_score(self, env, reference, linear_oracle):
        """Test reward equals the negative post-action score bit-exactly."""
        state = env.reset(reference, 0, seed=0)
        outcome = env.step(state, 10)
        direct = linear_oracle.score(outcome.state.current)[0]
        assert outcome.reward == -direct
        assert outcome.delta == pytest.approx(0.5, abs=1e-12)

    def test_step_does_not_mutate_state(self, env, reference):
        """Test states are values."""
        state = env.reset(reference, 0, seed=0)
        env.step(state, 4)
        assert state.t == 0 and state.mask.count == 0

    def test_repeated_cell_costs_a_step(self, env, reference):
        """Test masking a masked cell changes no pixels but advances time."""
        state = env.reset(reference, 0, seed=0)
        once = env.step(state, 10).state
        twice = env.step(once, 10)
        assert twice.state.t == 2
        assert twice.state.current.equals(once.current)
        assert twice.delta == 0.0

    def test_invalid_action(self, env, reference):
        """Test actions outside the grid are refused."""
        state = env.reset(reference, 0, seed=0)
        with pytest.raises(ContractViolation):
            env.step(state, 49)

    def test_step_after_done(self, env, reference):
        """Test a finished episode cannot continue."""
        state = env.reset(reference, 0, seed=0)
        for cell in range(49):
            state = env.step(state, cell).state
        assert state.done
        with pytest.raises(ContractViolation):
            env.step(state, 0)


class TestRewards:
    """Test reward accounting over many random steps."""

    def test_rewards_exact_and_deltas_telescope(self, linear_oracle, reference):
        """Test 1,000+ random steps: reward = −score and Σδ = p0 − pT."""
        env = MaskingEnv(linear_oracle, k=7)
        steps = 0
        for episode in range(21):
            policy = RandomPolicy(seed=episode)
            state = env.reset(reference, 0, seed=episode)
            deltas = []
            while not state.done:
                action, _ = policy.act(env.observe(state), state)
                outcome = env.step(state, action)
                assert outcome.reward == -linear_oracle.score(outcome.state.current)[0]
                deltas.append(outcome.delta)
                state = outcome.state
                steps += 1
            assert sum(deltas) == pytest.approx(state.scores[0] - state.scores[-1], abs=1e-12)
        assert steps >= 1000


class TestObservation:
    """Test the state encoder."""

    def test_width_and_range(self, env, reference):
        """Test pooled features lie in [0, 1]."""
        obs = env.observe(env.reset(reference, 0, seed=0))
        assert obs.shape == (49,)
        assert obs.min() >= 0.0 and obs.max() <= 1.0

    def test_class_one_hot_appended(self, linear_oracle, reference):
        """Test dataset-scoped encoders append a one-hot class block."""
        env = MaskingEnv(linear_oracle, k=7, encoder=EncoderConfig(pool=7, num_classes=3))
        obs = env.observe(env.reset(reference, 0, seed=0))
        assert obs.shape == (52,)
        assert obs[-3:].tolist() == [1.0, 0.0, 0.0]

    def test_masking_changes_observation(self, env, reference):
        """Test a fully masked image is observably different."""
        state = env.reset(reference, 0, seed=0)
        clean = env.observe(state)
        for cell in range(49):
            state = env.step(state, cell).state
        assert not np.array_equal(clean, env.observe(state))


class TestRollouts:
    """Test full episodes."""

    def test_episode_length_and_calls(self, linear_oracle, reference):
        """Test k² steps and k² + 1 classifier calls."""
        counted = CountingClassifier(linear_oracle)
        trace = run_episode(MaskingEnv(counted, k=7), RandomPolicy(1), reference, 0, seed=1)
        assert len(trace) == 49
        assert counted.calls == 50

    def test_random_policy_masks_every_cell(self, env, reference):
        """Test the uniform policy never repeats a cell."""
        trace = run_episode(env, RandomPolicy(4), reference, 0, seed=4)
        assert sorted(trace.cells.tolist()) == list(range(49))

    def test_reference_order_first(self, env, reference):
        """Test the reference policy follows its order then fills in."""
        trace = run_episode(env, ReferenceOrderPolicy([40, 10]), reference, 0, seed=0)
        assert trace.cells[:4].tolist() == [40, 10, 0, 1]

    def test_epsilon_zero_is_reference(self, env, reference):
        """Test ε = 0 reproduces the reference policy."""
        a = run_episode(env, ReferenceOrderPolicy([10, 24, 40]), reference, 0, seed=0)
        b = run_episode(env, EpsilonReferencePolicy([10, 24, 40], 0.0, seed=5), reference, 0, seed=0)
        assert np.array_equal(a.cells, b.cells)

    def test_rollout_matches_trace(self, env, reference):
        """Test rollout records the same episode as run_episode."""
        trajectory, trace = rollout(env, RandomPolicy(2), reference, 0, seed=2, image_id="x")
        again = run_episode(env, RandomPolicy(2), reference, 0, seed=2)
        assert np.array_equal(trajectory.actions, again.cells)
        assert np.array_equal(trace.scores, again.scores)
        assert trajectory.observations.shape == (50, 49)
        assert np.allclose(trajectory.rewards, -trace.scores)
        assert len(trajectory.transitions()) == 49
