"""Tests for the leave-one-month-out harness and per-day gamma selection."""

import numpy as np
import pandas as pd
import pytest

from src.crossval import CvConfig, daily_quantile_curve, monthly_cv, select_gamma
from src.data_io import dataset_from_frame, render_report
from src.errors import InsufficientMonths, ValidationError
from src.estimators import Method
from src.imputation import ImputerSpec

BETA = np.array([1.0, -2.0, 0.0])


def make_daily_frame(rng, start="2023-01-01", end="2023-12-31", rows_per_env=1):
    """One row per environment and day; the outcome is exactly linear in x."""
    records = []
    for day in pd.date_range(start, end, freq="D"):
        for env in (0, 1):
            for _ in range(rows_per_env):
                x = rng.normal(loc=float(env), size=3)
                records.append(
                    {
                        "date": day.strftime("%Y-%m-%d"),
                        "env": str(env),
                        "y": repr(float(x @ BETA)),
                        **{f"x{j + 1}": repr(float(v)) for j, v in enumerate(x)},
                    }
                )
    return pd.DataFrame(records, dtype=str)


@pytest.fixture
def year_frame(rng):
    return make_daily_frame(rng)


def test_select_gamma_single_gamma():
    assert select_gamma({1.0: [0.3, 0.1, 0.2]}) == [1.0, 1.0, 1.0]


def test_select_gamma_lowest_and_ties():
    """Test the lowest MSE wins per day and exact ties go to the smaller gamma."""
    table = {2.0: [4.0, 1.0, 5.0], 10.0: [2.0, 1.0, 6.0]}
    assert select_gamma(table) == [10.0, 2.0, 2.0]


def test_select_gamma_empty():
    with pytest.raises(ValidationError):
        select_gamma({})


def test_cv_config_validation():
    with pytest.raises(ValidationError):
        CvConfig(gammas=())
    with pytest.raises(ValidationError):
        CvConfig(mask_rate=1.0)
    assert CvConfig(gammas=(10, 1)).gammas == (1.0, 10.0)


def test_oracle_recovers_exact_outcomes(year_frame):
    """Test noiseless data gives zero daily MSE and a constant chosen gamma."""
    history = dataset_from_frame(year_frame, env_column="env")
    config = CvConfig(gammas=(5.0,), methods=(Method.ORACLE,), seed=3)
    result = monthly_cv(year_frame, history, config)

    np.testing.assert_allclose(result.daily_mse[("oracle", "basic")], 0.0, atol=1e-12)
    assert set(result.chosen_gamma[("oracle", "basic")].tolist()) == {5.0}
    assert result.days == tuple(range(1, 32))
    assert len(result.folds) == 12
    assert result.months[0] == "2023-01"


def test_day_counts_follow_calendar(year_frame):
    """Test day 31 is averaged over the seven months that have one."""
    history = dataset_from_frame(year_frame, env_column="env")
    config = CvConfig(gammas=(1.0,), methods=(Method.ORACLE,))
    result = monthly_cv(year_frame, history, config)
    counts = dict(zip(result.days, result.day_counts))
    assert counts[31] == 7
    assert counts[30] == 11
    assert counts[29] == 11
    assert counts[1] == 12


def test_folds_partition_rows(year_frame):
    history = dataset_from_frame(year_frame, env_column="env")
    config = CvConfig(gammas=(1.0,), methods=(Method.ORACLE,))
    result = monthly_cv(year_frame, history, config)
    assert sum(fold.n_test for fold in result.folds) == len(year_frame)
    for fold in result.folds:
        assert fold.n_train + fold.n_test == len(year_frame)
        assert fold.env_ids == ("0", "1")


def test_quantile_curve_is_monotone(year_frame):
    history = dataset_from_frame(year_frame, env_column="env")
    config = CvConfig(gammas=(1.0, 10.0), methods=(Method.EILLS_OBSERVE,), seed=1)
    result = monthly_cv(year_frame, history, config)
    values, ranks = daily_quantile_curve(result, "eills_observe")
    assert np.all(np.diff(values) >= 0)
    assert ranks[-1] == 1.0
    assert values.shape == ranks.shape
    with pytest.raises(ValidationError):
        daily_quantile_curve(result, "eills_mix")


def test_insufficient_months(rng):
    frame = make_daily_frame(rng, "2023-03-01", "2023-03-31", rows_per_env=3)
    history = dataset_from_frame(frame, env_column="env")
    with pytest.raises(InsufficientMonths):
        monthly_cv(frame, history, CvConfig(gammas=(1.0,), methods=(Method.ORACLE,)))


def test_thread_count_does_not_change_result(rng):
    frame = make_daily_frame(rng, "2023-01-01", "2023-03-31", rows_per_env=2)
    history = dataset_from_frame(frame, env_column="env")
    config = CvConfig(gammas=(1.0, 20.0), methods=(Method.EILLS_OBSERVE, Method.ORACLE), seed=5)
    serial = monthly_cv(frame, history, config, threads=1)
    parallel = monthly_cv(frame, history, config, threads=3)
    assert serial.to_dict() == parallel.to_dict()


@pytest.mark.integration
def test_iaei_with_history_imputer(year_frame, rng):
    """Test IAEI with an OLS imputer trained on separate history data."""
    history = dataset_from_frame(make_daily_frame(rng, rows_per_env=1), env_column="env")
    config = CvConfig(
        gammas=(1.0, 10.0),
        methods=(Method.IAEI, Method.ORACLE),
        imputer=ImputerSpec(family="ols"),
        seed=11,
    )
    result = monthly_cv(year_frame, history, config)
    np.testing.assert_allclose(result.daily_mse[("iaei", "basic")], 0.0, atol=1e-10)

    document = result.to_dict()
    assert document["kind"] == "cv"
    assert document["environment_column"] == "env"
    assert [c["method"] for c in document["curves"]] == ["iaei", "oracle"]

    lines = render_report(result, "csv").splitlines()
    assert len(lines) == 1 + 2 * len(result.days)
