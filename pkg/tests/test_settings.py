"""Tests for settings module."""

import settings
from src.estimators import Method
from src.objectives import PenaltyVariant
from src.sem import SemModel


def test_ground_truth_settings():
    """Test that the shipped ground truth matches the covariate count."""
    assert len(settings.BETA_STAR) == settings.N_COVARIATES
    assert [j + 1 for j, b in enumerate(settings.BETA_STAR) if b != 0] == [1, 2, 3]
    assert settings.SEM_MODELS == tuple(m.value for m in SemModel)


def test_method_and_variant_names():
    assert settings.METHODS == tuple(m.value for m in Method)
    assert settings.PENALTY_VARIANTS == tuple(v.value for v in PenaltyVariant)


def test_imputer_settings():
    """Test that strategy defaults are valid and shift sizes are ordered."""
    assert settings.DEFAULT_IMPUTER_FAMILY in settings.IMPUTER_FAMILIES
    assert settings.DEFAULT_STRATEGY in settings.IMPUTATION_STRATEGIES
    assert 0 < settings.BIAS_SHIFT_DELTA < settings.HBIAS_SHIFT_DELTA
    assert settings.HBIAS_NOISE_SD > 0


def test_simulation_defaults():
    assert all(n >= 2 for n in settings.DEFAULT_SAMPLE_SIZES)
    assert all(0 <= r < 1 for r in settings.DEFAULT_MISSING_RATIOS)
    assert list(settings.DEFAULT_GAMMAS) == sorted(settings.DEFAULT_GAMMAS)
    assert 0 <= settings.CV_MASK_RATE < 1
    assert settings.CV_MIN_MONTHS >= 2


def test_exit_codes_are_distinct():
    codes = [
        settings.EXIT_OK,
        settings.EXIT_VALIDATION,
        settings.EXIT_PARSE,
        settings.EXIT_RUNTIME,
    ]
    assert len(set(codes)) == len(codes)
    assert settings.EXIT_OK == 0
