"""Tests for metrics, replications and study aggregation."""

from dataclasses import replace

import numpy as np
import pytest

import settings
from src.dataset import Support
from src.errors import DimensionMismatch, ValidationError
from src.estimators import Method
from src.imputation import ImputerSpec
from src.objectives import PenaltyVariant
from src.sem import SemModel, ground_truth
from src.simulation import (
    ReplicationFailure,
    SimulationReport,
    SimulationSpec,
    compute_fdr,
    compute_l2_error,
    run_replication,
    run_studies,
    run_study,
    study_grid,
)


@pytest.fixture
def small_spec():
    return SimulationSpec(
        model=SemModel.MODEL0,
        n_per_env=40,
        missing_ratio=0.3,
        imputer=ImputerSpec(family="ols"),
        gammas=(1.0,),
        methods=tuple(Method),
        variants=(PenaltyVariant.BASIC,),
        replications=2,
        master_seed=7,
    )


@pytest.mark.parametrize(
    "selected,expected", [((1, 2, 3), 0.0), ((1, 2, 3, 7), 0.25), ((), 0.0), ((7, 8), 1.0)]
)
def test_compute_fdr(selected, expected):
    assert compute_fdr(Support(selected), ground_truth()) == expected


def test_compute_l2_error():
    truth = ground_truth()
    beta_star = np.array(settings.BETA_STAR)
    assert compute_l2_error(beta_star, truth) == 0.0
    assert compute_l2_error(beta_star + np.eye(12)[0], truth) == pytest.approx(1.0)
    assert compute_l2_error(np.zeros(12), truth) == pytest.approx(3.570714, abs=1e-6)
    with pytest.raises(DimensionMismatch):
        compute_l2_error(np.zeros(11), truth)


def test_spec_validation(small_spec):
    with pytest.raises(ValidationError):
        replace(small_spec, replications=0)
    with pytest.raises(ValidationError):
        replace(small_spec, missing_ratio=1.0)
    with pytest.raises(ValidationError):
        replace(small_spec, imputer=ImputerSpec(family="nonexistent"))
    with pytest.raises(ValidationError):
        replace(small_spec, gammas=())


def _metrics_by_method(outcome):
    return {r.method: (r.fdr, r.l2_error) for r in outcome.records}


def test_ratio_zero_methods_coincide_with_oracle_labels(small_spec):
    """Test that at ratio 0 with exact imputations every method scores the same."""
    spec = replace(small_spec, missing_ratio=0.0, imputer=ImputerSpec(family="oracle"))
    metrics = _metrics_by_method(run_replication(spec, 0))
    assert set(metrics) == {m.value for m in Method}
    fdr, l2 = metrics["oracle"]
    for method_fdr, method_l2 in metrics.values():
        assert method_fdr == fdr
        assert method_l2 == pytest.approx(l2, abs=1e-8)


def test_ratio_zero_label_based_methods_coincide(small_spec):
    """Test that at ratio 0 every method that reads observed labels matches the oracle."""
    spec = replace(small_spec, missing_ratio=0.0)
    metrics = _metrics_by_method(run_replication(spec, 1))
    fdr, l2 = metrics["oracle"]
    for method in ("iaei", "eills_observe", "eills_mix"):
        assert metrics[method][0] == fdr
        assert metrics[method][1] == pytest.approx(l2, abs=1e-8)


def test_oracle_label_hook_makes_impute_equal_oracle(small_spec):
    spec = replace(small_spec, missing_ratio=0.5, imputer=ImputerSpec(family="oracle"))
    metrics = _metrics_by_method(run_replication(spec, 0))
    assert metrics["eills_impute"] == metrics["oracle"]


def test_run_replication_is_deterministic(small_spec):
    first = run_replication(small_spec, 3)
    second = run_replication(small_spec, 3)
    assert first.records == second.records
    assert first.eta_hat == second.eta_hat


def test_labeled_training_mode(small_spec):
    """Test that the labeled-subset training mode runs and reports imputation bias."""
    spec = replace(small_spec, imputer=ImputerSpec(family="ols", training="labeled"))
    outcome = run_replication(spec, 0)
    assert not outcome.failures
    assert set(outcome.eta_hat) == {"1", "2"}


def test_single_replication_means_equal_values(small_spec):
    spec = replace(small_spec, replications=1, first_replication=4)
    report = run_study(spec)
    outcome = run_replication(spec, 4)
    values = {(r.method, r.variant, r.gamma): r for r in outcome.records}
    for cell in report.cells():
        record = values[(cell.method, cell.variant, cell.gamma)]
        assert cell.fdr_mean == record.fdr
        assert cell.l2_mean == record.l2_error
        assert cell.fdr_sd == 0.0
        assert cell.replications == 1


def test_split_and_merge_matches_single_run(small_spec):
    """Test that two halves with the same master seed merge into the full study."""
    full = run_study(small_spec)
    first = run_study(replace(small_spec, replications=1, first_replication=0))
    second = run_study(replace(small_spec, replications=1, first_replication=1))
    merged = first.merge(second)
    for a, b in zip(full.cells(), merged.cells()):
        assert a.to_dict() == b.to_dict()
    with pytest.raises(ValidationError):
        first.merge(first)


def test_thread_count_does_not_change_report(small_spec):
    serial = run_study(small_spec, threads=1)
    parallel = run_study(small_spec, threads=3)
    assert serial.to_dict() == parallel.to_dict()


@pytest.mark.integration
def test_cell_count_is_grid_product(small_spec):
    """Test |models| x |methods| x |variants| x |ratios| x |gammas| cells."""
    base = replace(
        small_spec, gammas=(1.0, 10.0), variants=tuple(PenaltyVariant), replications=1
    )
    specs = study_grid(base, [SemModel.MODEL0, SemModel.MODEL1], missing_ratios=[0.0, 0.3])
    assert len(specs) == 4
    report = run_studies(specs, threads=2)
    assert len(report.cells()) == 2 * 5 * 2 * 2 * 2
    document = report.to_dict()
    assert document["schema"] == settings.REPORT_SCHEMA
    assert document["kind"] == "simulation"
    assert len(document["provenance"]["runs"]) == 4


def test_best_cells_picks_lowest_mean_and_smallest_gamma_on_ties(small_spec):
    spec = replace(small_spec, gammas=(1.0, 5.0, 20.0), methods=(Method.ORACLE,))
    report = run_study(spec)
    best = report.best_cells("l2_error")
    assert len(best) == 1
    cells = report.cells()
    lowest = min(cell.l2_mean for cell in cells)
    assert best[0].l2_mean == lowest
    assert best[0].gamma == min(cell.gamma for cell in cells if cell.l2_mean == lowest)
    with pytest.raises(ValidationError):
        report.best_cells("auc")


def test_failures_are_counted_in_cells(small_spec):
    """Test that a failing method is flagged in its cells instead of aborting the study."""
    report = SimulationReport(specs=(small_spec,), records=())
    assert all(cell.replications == 0 for cell in report.cells())
    failure = ReplicationFailure(small_spec.scenario, 0, "iaei", "boom")
    report = SimulationReport(specs=(small_spec,), records=(), failures=(failure,))
    counts = {cell.method: cell.failures for cell in report.cells()}
    assert counts["iaei"] == 1
    assert counts["oracle"] == 0


def test_report_carries_imputation_diagnostics(small_spec):
    """Test that per-environment imputation residual means reach the serialized report."""
    report = run_study(small_spec)
    summary = report.to_dict()["provenance"]["imputation"]
    assert [entry["env_id"] for entry in summary] == ["1", "2"]
    outcomes = [run_replication(small_spec, i) for i in small_spec.replication_indices]
    for entry in summary:
        assert entry["scenario"] == list(small_spec.scenario)
        assert entry["replications"] == 2
        expected = np.mean([o.eta_hat[entry["env_id"]] for o in outcomes])
        assert entry["eta_hat_mean"] == pytest.approx(expected, rel=1e-12, abs=1e-15)

    oracle_spec = replace(small_spec, imputer=ImputerSpec(family="oracle"))
    assert run_study(oracle_spec).to_dict()["provenance"]["imputation"] == []


def _best_by_method(report, metric):
    return {cell.method: cell for cell in report.best_cells(metric)}


@pytest.mark.slow
def test_bias_imputation_study_favours_iaei():
    """Test that under a biased tree imputer IAEI beats the naive imputation methods."""
    spec = SimulationSpec(
        model=SemModel.MODEL1,
        n_per_env=1000,
        missing_ratio=0.7,
        imputer=ImputerSpec(family="boosted_trees", strategy="bias"),
        gammas=(1.0, 5.0, 10.0, 20.0),
        methods=(Method.IAEI, Method.EILLS_IMPUTE, Method.EILLS_MIX),
        variants=(PenaltyVariant.BASIC,),
        replications=100,
        master_seed=2024,
    )
    report = run_study(spec, threads=4)
    fdr = _best_by_method(report, "fdr")
    l2 = _best_by_method(report, "l2_error")
    for naive in ("eills_impute", "eills_mix"):
        assert fdr["iaei"].fdr_mean < fdr[naive].fdr_mean
        assert l2["iaei"].l2_mean < l2[naive].l2_mean
    assert l2["eills_impute"].l2_mean > 0.2


@pytest.mark.slow
def test_iaei_error_shrinks_with_sample_size():
    """Test that with a precise imputer the IAEI error falls as environments grow."""
    base = SimulationSpec(
        model=SemModel.MODEL0,
        n_per_env=250,
        missing_ratio=0.7,
        imputer=ImputerSpec(family="ols"),
        gammas=(1.0, 5.0, 10.0, 20.0),
        methods=(Method.IAEI,),
        variants=(PenaltyVariant.BASIC,),
        replications=100,
        master_seed=2024,
    )
    report = run_studies(study_grid(base, sample_sizes=(250, 500, 1000)), threads=4)
    l2 = sorted(report.best_cells("l2_error"), key=lambda cell: cell.n_per_env)
    fdr = sorted(report.best_cells("fdr"), key=lambda cell: cell.n_per_env)
    assert [cell.n_per_env for cell in l2] == [250, 500, 1000]
    assert l2[0].l2_mean > l2[1].l2_mean > l2[2].l2_mean
    for smaller, larger in zip(fdr, fdr[1:]):
        se = np.hypot(smaller.fdr_sd, larger.fdr_sd) / np.sqrt(base.replications)
        assert larger.fdr_mean <= smaller.fdr_mean + se
