"""Tests for the explainer registry, the λ ablation and agent learning."""

import numpy as np
import pytest

from rexl.baselines import RiseConfig, random_saliency
from rexl.errors import ConfigError
from rexl.experiments import make_explainers, mean_auc, oracle_items, run_lambda_ablation
from rexl.metrics import EvalConfig
from rexl.policy import init_params
from rexl.synthetic import planted_oracle_family
from rexl.trainer import OracleFamilyEpisodes, TrainConfig, train


class TestExplainers:
    """Test building explainers by name."""

    def test_unknown_method(self):
        """Test an unknown name is a config error."""
        with pytest.raises(ConfigError):
            make_explainers(["lime"])

    def test_rexl_needs_weights(self):
        """Test the learned method requires agent parameters."""
        with pytest.raises(ConfigError):
            make_explainers(["rexl"])

    def test_all_methods_return_cell_maps(self, linear_oracle, checker_28):
        """Test every method yields a k×k map for the same image."""
        params = init_params(7 * 7, hidden=(8,), seed=0, pool=7)
        explainers = make_explainers(
            ["rexl", "rise", "greedy", "random"], params=params, rise=RiseConfig(n_masks=50)
        )
        for name, method in explainers.items():
            saliency = method(linear_oracle, checker_28, 0)
            assert saliency.weights.shape == (7, 7), name

    def test_greedy_finds_planted_order(self, linear_oracle, checker_28):
        """Test the greedy explainer ranks the planted cells first."""
        saliency = make_explainers(["greedy"])["greedy"](linear_oracle, checker_28, 0)
        assert list(saliency.ranking()[:3]) == [10, 24, 40]

    def test_random_is_per_image(self, linear_oracle, checker_28):
        """Test the random method is stable per image and differs across images."""
        method = make_explainers(["random"], seed=3)["random"]
        first = method(linear_oracle, checker_28, 0)
        again = method(linear_oracle, checker_28, 0)
        other = method(linear_oracle, checker_28.with_data(1.0 - checker_28.data), 0)
        assert np.array_equal(first.weights, again.weights)
        assert not np.array_equal(first.weights, other.weights)


class TestOracleItems:
    """Test evaluation items built from oracle families."""

    def test_ids_and_classifiers(self):
        """Test each item carries its own oracle and reference."""
        oracles = planted_oracle_family(3, size=28)
        items = oracle_items(oracles, prefix="held")
        assert [i.image_id for i in items] == ["held-0000", "held-0001", "held-0002"]
        assert items[1].classifier is oracles[1]
        assert items[1].image is oracles[1].config.reference_image

    def test_mean_auc(self):
        """Test perfect maps score below random maps."""
        oracles = planted_oracle_family(5, size=28, seed=2)
        items = oracle_items(oracles)
        config = EvalConfig()
        perfect = [make_explainers(["greedy"])["greedy"](o, i.image, 0) for o, i in zip(oracles, items)]
        shuffled = [random_saliency(s, 7) for s in range(5)]
        assert mean_auc(None, items, perfect, config) < mean_auc(None, items, shuffled, config)
        assert np.isnan(mean_auc(None, [], [], config))


class TestLambdaAblation:
    """Test the paired λ comparison on delayed-drop oracles."""

    def test_table_layout(self):
        """Test one row per configuration and λ."""
        result = run_lambda_ablation(4, (0.0, 1.0), size=28)
        assert len(result.table) == 8
        assert result.aucs(1.0).shape == (4,)
        summary = result.summary()
        assert summary["lam"].tolist() == [0.0, 1.0]
        assert summary["count"].tolist() == [4, 4]

    def test_seeded(self):
        """Test the same seed reproduces the table."""
        a = run_lambda_ablation(3, (0.0, 0.8), size=28, seed=5).table
        b = run_lambda_ablation(3, (0.0, 0.8), size=28, seed=5).table
        assert a.equals(b)

    def test_needs_lambdas(self):
        """Test an empty λ list is refused."""
        with pytest.raises(ConfigError):
            run_lambda_ablation(2, ())

    def test_full_credit_beats_last_step_credit(self):
        """Test λ=1 has lower deletion AUC than λ=0 over 50 configurations."""
        result = run_lambda_ablation(50, (0.0, 1.0))
        assert result.aucs(1.0).mean() < result.aucs(0.0).mean()
        _, p = result.paired_test(1.0, 0.0)
        assert p < 0.05


def _learned_policy_passes(seed):
    train_oracles = planted_oracle_family(50, size=112, seed=100 + seed)
    held_out = planted_oracle_family(50, size=112, seed=200 + seed)
    config = TrainConfig(total_steps=200_000, learning_rate=7e-4, seed=seed, n_jobs=4)
    result = train(OracleFamilyEpisodes(train_oracles), config, k=7, pool=28)

    items = oracle_items(held_out)
    eval_config = EvalConfig(seed=seed)
    explainers = make_explainers(["rexl", "greedy"], params=result.params, seed=seed)
    learned = [explainers["rexl"](i.classifier, i.image, i.class_index) for i in items]
    greedy = [explainers["greedy"](i.classifier, i.image, i.class_index) for i in items]
    shuffled = [random_saliency(s, 7) for s in range(len(items))]

    rexl_auc = mean_auc(None, items, learned, eval_config)
    return (
        rexl_auc <= 1.1 * mean_auc(None, items, greedy, eval_config)
        and rexl_auc <= 0.7 * mean_auc(None, items, shuffled, eval_config)
    )


@pytest.mark.slow
def test_agent_learns_planted_cells():
    """Test agents trained on the linear oracle family approach greedy and beat random maps."""
    assert sum(_learned_policy_passes(seed) for seed in range(5)) >= 4
