"""Tests for run configuration loading and validation."""

import json

import pytest

from rexl.config import (
    ClassifierSpec,
    RunConfig,
    build_classifier,
    default_threads,
    load_run_config,
    require_paths,
    write_effective_config,
)
from rexl.errors import ConfigError
from rexl.storage import load_json


@pytest.fixture
def config_file(tmp_path):
    def write(obj):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(obj))
        return path
    return write


class TestLoading:
    """Test reading config files and applying overrides."""

    def test_version_required(self, config_file):
        """Test a file without a version is refused."""
        with pytest.raises(ConfigError, match="version"):
            load_run_config(config_file({"seed": 1}))

    def test_wrong_version(self, config_file):
        """Test only version 1 is accepted."""
        with pytest.raises(ConfigError):
            load_run_config(config_file({"version": 2}))

    def test_unknown_keys(self, config_file):
        """Test unknown top-level and section keys are errors."""
        with pytest.raises(ConfigError, match="unknown keys"):
            load_run_config(config_file({"version": 1, "sed": 1}))
        with pytest.raises(ConfigError, match="train"):
            load_run_config(config_file({"version": 1, "train": {"learning_rat": 0.1}}))

    def test_missing_file(self, tmp_path):
        """Test a missing config path is a config error."""
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.json")

    def test_overrides_beat_file(self, config_file):
        """Test non-None overrides replace file values."""
        path = config_file({"version": 1, "seed": 1, "lam": 0.5})
        config = load_run_config(path, seed=7, lam=None)
        assert config.seed == 7
        assert config.lam == 0.5

    def test_defaults_fill_gaps(self, config_file):
        """Test defaults apply only where nothing else sets a key."""
        path = config_file({"version": 1, "seed": 1})
        config = load_run_config(path, defaults={"seed": 9, "k": 8})
        assert config.seed == 1
        assert config.k == 8

    def test_no_file(self):
        """Test overrides alone build a config."""
        assert load_run_config(None, seed=4).seed == 4


class TestValidation:
    """Test field checks."""

    @pytest.mark.parametrize(
        "bad",
        [
            {"lam": 1.5},
            {"lambdas": [0.0, -0.1]},
            {"scope": "XS"},
            {"methods": ["rexl", "lime"]},
            {"threads": 0},
            {"eval": {"fill": "zeros"}},
            {"classifier": {"type": "tiny"}},
            {"synth": {"size": 30}},
        ],
    )
    def test_rejects(self, bad):
        """Test invalid values fail when the config is built."""
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"version": 1, **bad})

    def test_seed_flows_into_sections(self):
        """Test the top-level seed and threads reach seeded sections."""
        config = RunConfig.from_dict({"version": 1, "seed": 5, "threads": 3, "rise": {"n_masks": 10}})
        assert config.rise_config().seed == 5
        assert config.rise_config().n_jobs == 3
        assert config.rise_config().n_masks == 10
        assert config.train_config().seed == 5
        assert config.eval_config().seed == 5

    def test_section_seed_wins(self):
        """Test a section may pin its own seed."""
        config = RunConfig.from_dict({"version": 1, "seed": 5, "eval": {"seed": 2}})
        assert config.eval_config().seed == 2


class TestHashing:
    """Test the config hash and the effective-config file."""

    def test_hash_ignores_output_locations(self):
        """Test out and db do not change the hash."""
        a = RunConfig.from_dict({"version": 1, "threads": 1, "out": "a"})
        b = RunConfig.from_dict({"version": 1, "threads": 1, "out": "b", "db": "sqlite:///x.db"})
        assert a.hash == b.hash

    def test_hash_ignores_thread_count(self, monkeypatch):
        """Test the hash is the same on machines with different core counts."""
        explicit = [RunConfig.from_dict({"version": 1, "threads": n}) for n in (1, 4)]
        assert explicit[0].hash == explicit[1].hash
        monkeypatch.delenv("REXL_THREADS", raising=False)
        monkeypatch.setattr("os.cpu_count", lambda: 64)
        defaulted = RunConfig.from_dict({"version": 1})
        assert defaulted.threads == 64
        assert defaulted.hash == explicit[0].hash

    def test_hash_tracks_results(self):
        """Test a seed change changes the hash."""
        a = RunConfig.from_dict({"version": 1, "threads": 1, "seed": 0})
        b = RunConfig.from_dict({"version": 1, "threads": 1, "seed": 1})
        assert a.hash != b.hash

    def test_write_effective_config(self, tmp_path):
        """Test the merged config is written with its hash."""
        config = RunConfig.from_dict({"version": 1, "threads": 1, "lam": 0.8})
        path = write_effective_config(config, tmp_path)
        saved = load_json(path)
        assert saved["lam"] == 0.8
        assert saved["config_hash"] == config.hash
        assert RunConfig.from_dict({k: v for k, v in saved.items() if k != "config_hash"}).hash == config.hash


class TestEnvironment:
    """Test environment-driven defaults and path checks."""

    def test_threads_from_env(self, monkeypatch):
        """Test REXL_THREADS sets the default thread count."""
        monkeypatch.setenv("REXL_THREADS", "3")
        assert default_threads() == 3
        assert RunConfig.from_dict({"version": 1}).threads == 3

    def test_bad_threads_env(self, monkeypatch):
        """Test a non-integer REXL_THREADS is a config error."""
        monkeypatch.setenv("REXL_THREADS", "many")
        with pytest.raises(ConfigError):
            default_threads()

    def test_require_paths(self, tmp_path):
        """Test missing inputs are reported by name."""
        config = RunConfig.from_dict({"version": 1, "threads": 1, "weights": str(tmp_path / "agent.json")})
        with pytest.raises(ConfigError, match="weights"):
            require_paths(config, "weights")
        with pytest.raises(ConfigError, match="dataset"):
            require_paths(config, "dataset")
        (tmp_path / "agent.json").write_text("{}")
        require_paths(config, "weights")

    def test_oracle_is_not_one_classifier(self):
        """Test oracles come from the oracle section."""
        with pytest.raises(ConfigError):
            build_classifier(ClassifierSpec())
