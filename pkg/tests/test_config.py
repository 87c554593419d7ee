"""Tests for study configuration files."""

import tempfile
from pathlib import Path

import pytest

import settings
from src.config import ConfigManager
from src.errors import ParseError, ReportIOError, SchemaError
from src.estimators import Method
from src.objectives import PenaltyVariant
from src.sem import SemModel


def _config(tmp_dir, text):
    path = Path(tmp_dir) / "study.ini"
    path.write_text(text, encoding="utf-8")
    return ConfigManager(path)


def test_defaults_without_file():
    """Test that no config file yields the settings defaults."""
    config = ConfigManager()
    spec = config.imputer_spec()
    assert spec.family == settings.DEFAULT_IMPUTER_FAMILY
    assert spec.strategy == settings.DEFAULT_STRATEGY
    search = config.search_config()
    assert search.gamma == settings.DEFAULT_GAMMA
    assert search.variant is PenaltyVariant.BASIC

    specs = config.simulation_specs()
    expected = len(settings.DEFAULT_SAMPLE_SIZES) * len(settings.DEFAULT_MISSING_RATIOS)
    assert len(specs) == expected
    assert all(s.model is SemModel.MODEL0 for s in specs)
    assert specs[0].methods == tuple(Method)


def test_simulation_grid_from_file():
    with tempfile.TemporaryDirectory() as tmp_dir:
        config = _config(
            tmp_dir,
            "[simulation]\n"
            "models = model1, model3\n"
            "n_per_env = 250\n"
            "missing_ratios = 0.3, 0.7  # two ratios\n"
            "gammas = 1, 20\n"
            "methods = iaei, oracle\n"
            "variants = enhanced\n"
            "replications = 5\n"
            "master_seed = 42\n",
        )
        specs = config.simulation_specs()
    assert [(s.model, s.missing_ratio) for s in specs] == [
        (SemModel.MODEL1, 0.3),
        (SemModel.MODEL1, 0.7),
        (SemModel.MODEL3, 0.3),
        (SemModel.MODEL3, 0.7),
    ]
    assert specs[0].gammas == (1.0, 20.0)
    assert specs[0].methods == (Method.IAEI, Method.ORACLE)
    assert specs[0].variants == (PenaltyVariant.ENHANCED,)
    assert all(s.replications == 5 and s.master_seed == 42 for s in specs)


def test_master_seed_override():
    with tempfile.TemporaryDirectory() as tmp_dir:
        config = _config(tmp_dir, "[simulation]\nmaster_seed = 42\n")
        assert config.simulation_specs(master_seed=9)[0].master_seed == 9


def test_imputer_section():
    with tempfile.TemporaryDirectory() as tmp_dir:
        config = _config(
            tmp_dir,
            "[imputer]\n"
            "family = boosted_trees\n"
            "strategy = bias\n"
            "shift_delta = 3\n"
            "n_rounds = 50\n"
            "learning_rate = 0.05\n",
        )
        spec = config.imputer_spec()
        assert spec.family == "boosted_trees"
        assert spec.strategy == "bias"
        assert spec.shift_delta == 3.0
        assert spec.hyperparams == {"n_rounds": 50, "learning_rate": 0.05}
        assert config.imputer_spec(strategy="hbias").strategy == "hbias"


def test_unknown_section_and_key():
    with tempfile.TemporaryDirectory() as tmp_dir:
        with pytest.raises(SchemaError):
            _config(tmp_dir, "[plots]\nwidth = 3\n")
        config = _config(tmp_dir, "[search]\ngama = 1\n")
        with pytest.raises(SchemaError) as excinfo:
            config.search_config()
        assert excinfo.value.column == "gama"


def test_bad_values():
    """Test that unparseable values raise ParseError naming the key."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        config = _config(tmp_dir, "[search]\nmax_support_dim = many\n")
        with pytest.raises(ParseError) as excinfo:
            config.search_config()
        assert excinfo.value.column == "max_support_dim"

        config = _config(tmp_dir, "[simulation]\ngammas = 1, two\n")
        with pytest.raises(ParseError):
            config.simulation_specs()

        config = _config(tmp_dir, "[search]\nvariant = fancy\n")
        with pytest.raises(ParseError):
            config.search_config()


def test_malformed_and_missing_file():
    with tempfile.TemporaryDirectory() as tmp_dir:
        with pytest.raises(ParseError):
            _config(tmp_dir, "gammas = 1\n")
    with pytest.raises(ReportIOError):
        ConfigManager("/nonexistent/study.ini")


def test_cv_section():
    with tempfile.TemporaryDirectory() as tmp_dir:
        config = _config(
            tmp_dir,
            "[cv]\n"
            "gammas = 10, 1\n"
            "methods = iaei\n"
            "mask_rate = 0.5\n"
            "env_column = workingday\n"
            "[imputer]\n"
            "family = random_forest\n",
        )
        cv = config.cv_config(seed=4)
    assert cv.gammas == (1.0, 10.0)
    assert cv.methods == (Method.IAEI,)
    assert cv.mask_rate == 0.5
    assert cv.env_column == "workingday"
    assert cv.date_column == settings.CV_DATE_COLUMN
    assert cv.imputer.family == "random_forest"
    assert cv.seed == 4
