"""Tests for deletion/insertion curves, reports and the benchmark."""

import json

import numpy as np
import pytest

from rexl.baselines import RiseConfig, pooled_map, rise_saliency
from rexl.classifiers import SlowClassifier, checker_reference, make_oracle
from rexl.core import auc
from rexl.errors import ConfigError, ContractViolation
from rexl.metrics import (
    EvalConfig,
    EvalItem,
    EvalReport,
    benchmark,
    comparison_table,
    deletion_curve,
    environment_descriptor,
    evaluate_method,
    format_table,
    insertion_curve,
)
from rexl.models import SaliencyMap
from rexl.policy import init_params
from rexl.saliency import explain, normalize_map


@pytest.fixture
def perfect_map(linear_oracle):
    return normalize_map(linear_oracle.config.weight_map())


def _map_with_order(cells):
    weights = np.zeros(49)
    weights[cells] = np.arange(len(cells), 0, -1, dtype=float)
    return normalize_map(weights.reshape(7, 7))


class TestDeletion:
    """Test the deletion curve."""

    def test_perfect_map_curve(self, linear_oracle, perfect_map):
        """Test scores fall by the planted weights in ranking order."""
        curve = deletion_curve(linear_oracle, linear_oracle.config.reference_image, 0, perfect_map)
        assert len(curve) == 50
        assert curve.scores[:4] == pytest.approx([1.0, 0.5, 0.2, 0.0], abs=1e-12)
        assert np.allclose(curve.fractions, np.arange(50) / 49)

    def test_several_cells_per_step(self, linear_oracle, perfect_map):
        """Test step sizes above one cell."""
        config = EvalConfig(cells_per_step=7)
        curve = deletion_curve(linear_oracle, linear_oracle.config.reference_image, 0, perfect_map, config)
        assert len(curve) == 8
        assert curve.scores[1] == pytest.approx(0.0, abs=1e-12)

    def test_pixel_fractions_with_remainder_cells(self):
        """Test fractions count pixels when cells differ in size."""
        reference = checker_reference(30)
        oracle = make_oracle([(48, 1.0)], size=30, tolerance=0.1, reference=reference)
        curve = deletion_curve(oracle, reference, 0, _map_with_order([48, 0]))
        assert curve.fractions[1] == pytest.approx(36 / 900)
        assert curve.fractions[2] == pytest.approx(52 / 900)
        assert curve.fractions[-1] == 1.0

    def test_later_planted_cell_raises_auc(self, linear_oracle):
        """Test moving a planted cell down the ranking makes deletion AUC worse."""
        image = linear_oracle.config.reference_image
        good = auc(deletion_curve(linear_oracle, image, 0, _map_with_order([10, 24, 40])))
        worse = auc(deletion_curve(linear_oracle, image, 0, _map_with_order([10, 24, 0, 40])))
        assert worse > good

    def test_needs_normalized_map(self, linear_oracle):
        """Test raw maps are refused."""
        raw = SaliencyMap(np.ones((7, 7)), normalized=False)
        with pytest.raises(ContractViolation):
            deletion_curve(linear_oracle, linear_oracle.config.reference_image, 0, raw)

    def test_seeded_noise(self, linear_oracle, perfect_map):
        """Test the same seed reproduces the curve exactly."""
        image = linear_oracle.config.reference_image
        a = deletion_curve(linear_oracle, image, 0, perfect_map, EvalConfig(seed=3))
        b = deletion_curve(linear_oracle, image, 0, perfect_map, EvalConfig(seed=3))
        assert np.array_equal(a.scores, b.scores)


class TestInsertion:
    """Test the insertion curve."""

    def test_perfect_map_reaches_full_score(self, linear_oracle, perfect_map):
        """Test revealing the planted cells alone restores the score."""
        curve = insertion_curve(linear_oracle, linear_oracle.config.reference_image, 0, perfect_map)
        assert curve.scores[:4] == pytest.approx([0.0, 0.5, 0.8, 1.0], abs=1e-9)
        assert curve.scores[-1] == pytest.approx(1.0)

    def test_config_validation(self):
        """Test bad protocol settings are config errors."""
        with pytest.raises(ConfigError):
            EvalConfig(blur_sigma=0.0)
        with pytest.raises(ConfigError):
            EvalConfig(fill="zero")


class TestReports:
    """Test method evaluation and report files."""

    @pytest.fixture
    def items(self, linear_oracle):
        image = linear_oracle.config.reference_image
        return [EvalItem(image, 0, "a"), EvalItem(image, 0, "b")]

    def test_evaluate_method(self, tmp_path, linear_oracle, items, perfect_map):
        """Test per-image rows, means and the saved JSON."""

        def planted(clf, image, c):
            clf.score(image)
            return perfect_map

        report = evaluate_method("planted", planted, linear_oracle, items, n_jobs=2, lam=1.0, config_hash="h")
        assert len(report) == 2
        assert [e.image_id for e in report.evaluations] == ["a", "b"]
        assert report.mean_deletion_auc == pytest.approx((0.75 + 0.35 + 0.1) / 49)
        assert report.mean_calls == 1
        path = tmp_path / "report.json"
        report.save(path)
        obj = json.loads(path.read_text())
        assert obj["format"] == "rexl-report/1"
        assert obj["protocol"]["deletion_fill"] == "noise"
        assert obj["summary"]["n_images"] == 2
        assert "seconds" not in obj["images"][0]
        timings = report.save_timings(tmp_path / "timings.csv")
        assert timings.read_text().splitlines()[0] == "image_id,calls,seconds"
        written = report.save_curves(tmp_path / "curves")
        assert len(written) == 4
        assert (tmp_path / "curves" / "planted_a_deletion.csv").exists()

    def test_items_may_carry_their_own_classifier(self, linear_oracle, perfect_map):
        """Test per-item classifiers override the shared one."""
        image = linear_oracle.config.reference_image
        report = evaluate_method(
            "planted", lambda clf, img, c: perfect_map, None, [EvalItem(image, 0, "x", linear_oracle)]
        )
        assert report.evaluations[0].deletion.scores[1] == pytest.approx(0.5)

    def test_empty_report(self):
        """Test an empty report has no means and renders an empty table."""
        report = EvalReport("none", EvalConfig())
        assert report.mean_deletion_auc is None
        assert format_table(comparison_table([])) == "(no rows)"
        table = comparison_table([report])
        assert table.loc[0, "n_images"] == 0


class TestBenchmark:
    """Test timing and call accounting."""

    def test_call_counts_and_speedup(self, linear_oracle):
        """Test explain costs 50 calls against 4,000 for RISE and is at least 5× faster."""
        slow = SlowClassifier(linear_oracle, delay=0.001)
        params = init_params(49, 49, hidden=(8,), seed=0, pool=7)
        methods = {
            "rexl": lambda clf, img, c: explain(params, clf, img, c).saliency,
            "rise": lambda clf, img, c: pooled_map(rise_saliency(clf, img, c, RiseConfig(n_masks=4000)), 7),
        }
        items = [EvalItem(linear_oracle.config.reference_image, 0, "a")]
        report = benchmark(methods, slow, items, repetitions=1)
        assert report.timing("rexl").mean_calls == 50
        assert report.timing("rise").mean_calls == 4000
        assert report.speedup("rexl", "rise") >= 5.0

    def test_report_contents(self, tmp_path, linear_oracle, perfect_map):
        """Test the saved benchmark JSON."""
        items = [EvalItem(linear_oracle.config.reference_image, 0, "a")]
        report = benchmark({"planted": lambda clf, img, c: perfect_map}, linear_oracle, items, repetitions=3)
        assert report.timing("planted").runs == 3
        assert report.timing("planted").mean_calls == 0
        report.save(tmp_path / "bench.json", seed=1)
        obj = json.loads((tmp_path / "bench.json").read_text())
        assert obj["format"] == "rexl-bench/1" and obj["seed"] == 1
        assert obj["environment"]["threads"] == 1
        with pytest.raises(ContractViolation):
            benchmark({}, linear_oracle, items, repetitions=0)

    def test_environment_descriptor(self):
        """Test hardware facts are recorded."""
        env = environment_descriptor(4)
        assert env["threads"] == 4
        assert "cpu_count" in env and isinstance(env["blas"], list)
