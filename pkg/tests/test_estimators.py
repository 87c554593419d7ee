"""Tests for the estimation methods and their dataset views."""

import numpy as np
import pytest

from src.errors import MissingImputation, OracleNeedsLabels, ValidationError
from src.estimators import Method, MethodFitter, fit, prepare_view
from src.objectives import ObjectiveMode, PenaltyVariant, objective
from src.optimizer import SearchConfig
from src.sem import SemModel, generate_dataset
from tests.conftest import (
    dense_minimum,
    linear_dataset,
    make_dataset,
    make_env,
    random_instance,
)


def _masked(rng, data, rate=0.5):
    """Hide outcomes at random, keeping at least one label per environment."""
    environments = []
    for env in data:
        mask = rng.random(env.N) >= rate
        mask[0] = True
        environments.append(env.with_labels(env.labels, mask))
    return data.replace_environments(environments)


def _noisy_predictions(rng, data, sd=0.3):
    return {env.env_id: env.labels + sd * rng.standard_normal(env.N) for env in data}


def test_iaei_view_keeps_every_row(rng):
    data = linear_dataset(rng, n=10)
    masked = _masked(rng, data)
    view = prepare_view(Method.IAEI, masked, _noisy_predictions(rng, data))
    assert [env.N for env in view.data] == [10, 10]
    assert view.mode is ObjectiveMode.ADJUSTED


def test_observe_view_keeps_labeled_rows():
    """Test that N=10, n=3 gives a three-row environment."""
    x = np.arange(10, dtype=float)
    mask = [True] * 3 + [False] * 7
    data = make_dataset(make_env("1", x, x, mask=mask), make_env("2", x, x))
    view = prepare_view(Method.EILLS_OBSERVE, data)
    assert view.data.get("1").N == 3
    assert view.data.get("1").fully_labeled


def test_mix_view_with_exact_predictions_is_oracle_view(rng):
    """Test that substituting h(x) = y everywhere reproduces the fully labeled data."""
    data = linear_dataset(rng, n=20)
    masked = _masked(rng, data)
    exact = {env.env_id: env.labels for env in data}
    mix = prepare_view(Method.EILLS_MIX, masked, exact)
    oracle = prepare_view(Method.ORACLE, data)
    for a, b in zip(mix.data, oracle.data):
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.covariates, b.covariates)


def test_mix_view_keeps_observed_labels(rng):
    data = make_dataset(make_env("1", [1.0, 2.0], [5.0, 0.0], mask=[True, False]))
    view = prepare_view(Method.EILLS_MIX, data, {"1": np.array([9.0, 8.0])})
    np.testing.assert_array_equal(view.data.get("1").labels, [5.0, 8.0])


def test_methods_needing_imputations(two_point_env):
    for method in (Method.IAEI, Method.EILLS_IMPUTE, Method.EILLS_MIX):
        with pytest.raises(MissingImputation):
            prepare_view(method, two_point_env)


def test_oracle_needs_full_labels(rng):
    masked = _masked(rng, linear_dataset(rng, n=10))
    with pytest.raises(OracleNeedsLabels):
        prepare_view(Method.ORACLE, masked)


def test_fit_needs_two_environments(two_point_env):
    with pytest.raises(ValidationError):
        fit(Method.ORACLE, two_point_env)


@pytest.mark.parametrize("variant", list(PenaltyVariant))
def test_iaei_equals_oracle_without_missing_outcomes(variant):
    """Test the reduction identity of the adjusted objective at zero missingness."""
    for replication in range(20):
        data = generate_dataset(SemModel.MODEL0, 500, 99, replication)
        rng = np.random.default_rng(replication)
        predictions = {
            env.env_id: env.labels + 0.5 + rng.standard_normal(env.N) for env in data
        }
        for gamma in (1.0, 10.0):
            config = SearchConfig(gamma=gamma, variant=variant)
            iaei = fit(Method.IAEI, data, predictions, config)
            oracle = fit(Method.ORACLE, data, config=config)
            assert iaei.support == oracle.support
            assert np.max(np.abs(iaei.beta - oracle.beta)) <= 1e-8
            assert iaei.method == "iaei" and oracle.method == "oracle"


def test_impute_with_true_labels_equals_oracle(rng):
    """Test that eills_impute on h = y is exactly the oracle fit."""
    data = linear_dataset(rng, n=60)
    masked = _masked(rng, data)
    truth = {env.env_id: env.labels for env in data}
    config = SearchConfig(gamma=10.0)
    impute = fit(Method.EILLS_IMPUTE, masked, truth, config)
    oracle = fit(Method.ORACLE, data, config=config)
    assert impute.support == oracle.support
    np.testing.assert_array_equal(impute.beta, oracle.beta)
    assert impute.objective == oracle.objective


@pytest.mark.parametrize("method", list(Method))
@pytest.mark.parametrize("seed", range(50))
def test_fit_matches_brute_force(seed, method):
    """Test each method against dense minimization of its own objective over 16 supports."""
    full, masked, predictions = random_instance(seed)
    data = full if method is Method.ORACLE else masked
    imputations = predictions if method.needs_imputations else None
    view = prepare_view(method, data, imputations)
    for variant in PenaltyVariant:
        for gamma in (0.0, 5.0):
            result = fit(method, data, imputations, SearchConfig(gamma=gamma, variant=variant))
            best = dense_minimum(
                data.p,
                lambda beta, support: objective(
                    view.data, beta, support, gamma, view.mode, view.imputations, variant
                ).total,
            )
            assert result.objective == pytest.approx(best, abs=1e-8)


def test_fit_invariant_to_row_and_environment_order(rng):
    """Test that permuting rows and environments gives identical fits."""
    data = linear_dataset(rng, n=50, shifts=(0.0, 1.0, 2.0))
    masked = _masked(rng, data)
    predictions = _noisy_predictions(rng, data)
    orders = {env.env_id: rng.permutation(env.N) for env in masked}
    shuffled = masked.replace_environments(
        [env.subset(orders[env.env_id]) for env in reversed(masked.environments)]
    )
    shuffled_predictions = {k: v[orders[k]] for k, v in predictions.items()}
    config = SearchConfig(gamma=2.0, variant=PenaltyVariant.ENHANCED)
    first = fit(Method.IAEI, masked, predictions, config)
    second = fit(Method.IAEI, shuffled, shuffled_predictions, config)
    assert first.support == second.support
    np.testing.assert_array_equal(first.beta, second.beta)
    assert first.objective == pytest.approx(second.objective, abs=1e-12)


def test_fit_grid_covers_every_setting(rng):
    data = linear_dataset(rng, n=40)
    fitter = MethodFitter(Method.ORACLE, data)
    results = fitter.fit_grid([1.0, 10.0], list(PenaltyVariant))
    assert [(r.penalty_variant, r.gamma) for r in results] == [
        ("basic", 1.0), ("basic", 10.0), ("enhanced", 1.0), ("enhanced", 10.0),
    ]
