"""
Replication studies over the structural equation models.

One replication draws both environments, hides outcomes completely at random,
trains the imputer, fits every method over the gamma grid and scores the
selected support (FDR) and coefficients (l2 error) against the truth. Every
random draw comes from a stream derived from (master_seed, replication,
purpose), so a study gives the same report for any thread count or split.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

import settings
from src.dataset import GroundTruth, MultiEnvDataset, Support
from src.errors import DimensionMismatch, IAEIError, ValidationError
from src.estimators import Method, MethodFitter
from src.imputation import ImputerSpec, build_strategy, impute_dataset
from src.objectives import PenaltyVariant
from src.optimizer import SearchConfig
from src.sem import SemModel, apply_mcar, generate_dataset, ground_truth
from src.utils import column_means, derive_rng, exact_sum

logger = logging.getLogger(__name__)

# Purpose tags of the derived random streams
STREAM_DATA = 0
STREAM_MASK = 1
STREAM_TRAINING = 2
STREAM_IMPUTER = 3

METRICS = ("fdr", "l2_error")


def compute_fdr(selected: Support, truth: GroundTruth) -> float:
    """Share of selected covariates outside S*; an empty selection scores 0."""
    false_hits = set(selected.indices) - set(truth.support_star.indices)
    return len(false_hits) / max(len(selected), 1)


def compute_l2_error(beta_hat, truth: GroundTruth) -> float:
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    if beta_hat.shape[0] != truth.p:
        raise DimensionMismatch(
            f"beta_hat has length {beta_hat.shape[0]}, truth has p={truth.p}"
        )
    return float(np.linalg.norm(beta_hat - truth.beta_star))


@dataclass(frozen=True)
class SimulationSpec:
    """One scenario of a study: model, sample size, missing ratio and imputer."""

    model: SemModel = SemModel.MODEL0
    n_per_env: int = settings.DEFAULT_SAMPLE_SIZES[0]
    missing_ratio: float = settings.DEFAULT_MISSING_RATIOS[0]
    imputer: ImputerSpec = field(default_factory=ImputerSpec)
    gammas: tuple[float, ...] = settings.DEFAULT_GAMMAS
    methods: tuple[Method, ...] = tuple(Method)
    variants: tuple[PenaltyVariant, ...] = tuple(PenaltyVariant)
    replications: int = settings.DEFAULT_REPLICATIONS
    master_seed: int = settings.DEFAULT_MASTER_SEED
    # Index of the first replication; lets a study be split and merged
    first_replication: int = 0
    max_support_dim: int = settings.DEFAULT_MAX_SUPPORT_DIM
    ridge_jitter: float = settings.DEFAULT_RIDGE_JITTER

    def __post_init__(self):
        object.__setattr__(self, "model", SemModel(self.model))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(
            self, "variants", tuple(PenaltyVariant(v) for v in self.variants)
        )
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")
        if self.first_replication < 0:
            raise ValidationError(
                f"first_replication must be >= 0, got {self.first_replication}"
            )
        if not (self.gammas and self.methods and self.variants):
            raise ValidationError("gammas, methods and variants must be nonempty")
        if any(g < 0 for g in self.gammas):
            raise ValidationError(f"gammas must be >= 0, got {self.gammas}")
        if self.n_per_env < 2:
            raise ValidationError(f"n_per_env must be >= 2, got {self.n_per_env}")
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValidationError(
                f"missing_ratio must be in [0, 1), got {self.missing_ratio}"
            )
        if self.imputer.family != "oracle" and self.imputer.family not in settings.IMPUTER_FAMILIES:
            raise ValidationError(f"Unknown imputer family '{self.imputer.family}'")

    @property
    def replication_indices(self) -> range:
        return range(self.first_replication, self.first_replication + self.replications)

    @property
    def scenario(self) -> tuple:
        return (
            self.model.value,
            self.n_per_env,
            self.missing_ratio,
            self.imputer.family,
            self.imputer.strategy,
        )

    def search_config(self, gamma: float, variant: PenaltyVariant) -> SearchConfig:
        return SearchConfig(
            gamma=gamma,
            variant=variant,
            max_support_dim=self.max_support_dim,
            ridge_jitter=self.ridge_jitter,
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "n_per_env": self.n_per_env,
            "missing_ratio": self.missing_ratio,
            "imputer": self.imputer.to_dict(),
            "gammas": list(self.gammas),
            "methods": [m.value for m in self.methods],
            "variants": [v.value for v in self.variants],
            "replications": self.replications,
            "first_replication": self.first_replication,
            "master_seed": self.master_seed,
        }


def study_grid(
    base: SimulationSpec,
    models: Sequence = (),
    sample_sizes: Sequence[int] = (),
    missing_ratios: Sequence[float] = (),
) -> list[SimulationSpec]:
    """Scenarios for every (model, n, ratio) combination; empty axes keep the base value."""
    return [
        replace(base, model=model, n_per_env=n, missing_ratio=ratio)
        for model, n, ratio in itertools.product(
            models or (base.model,),
            sample_sizes or (base.n_per_env,),
            missing_ratios or (base.missing_ratio,),
        )
    ]


@dataclass(frozen=True)
class ReplicationRecord:
    """Metrics of one fitted estimator in one replication."""

    scenario: tuple
    replication: int
    method: str
    variant: str
    gamma: float
    fdr: float
    l2_error: float
    support: tuple[int, ...]

    @property
    def cell(self) -> tuple:
        return self.scenario + (self.method, self.variant, self.gamma)


@dataclass(frozen=True)
class ReplicationFailure:
    scenario: tuple
    replication: int
    method: str
    error: str


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    records: tuple[ReplicationRecord, ...]
    failures: tuple[ReplicationFailure, ...]
    eta_hat: dict


def _training_sources(spec: SimulationSpec, masked: MultiEnvDataset, replication: int):
    if spec.imputer.training == "labeled":
        return {
            env.env_id: (env.labeled_covariates, env.labels) for env in masked.environments
        }
    fresh = generate_dataset(
        spec.model, spec.n_per_env, spec.master_seed, replication, STREAM_TRAINING
    )
    return {env.env_id: (env.covariates, env.labels) for env in fresh.environments}


def _imputations(
    spec: SimulationSpec, full: MultiEnvDataset, masked: MultiEnvDataset, replication: int
):
    if spec.imputer.family == "oracle":
        return {env.env_id: env.labels for env in full.environments}, {}

    imputer_seed = int(
        derive_rng(spec.master_seed, replication, STREAM_IMPUTER, spec.imputer.seed).integers(
            2**31 - 1
        )
    )
    imputer = replace(spec.imputer, seed=imputer_seed)
    models = build_strategy(imputer, _training_sources(spec, masked, replication))
    predictions, diagnostics = impute_dataset(models, masked)
    return predictions, diagnostics.eta_hat


def run_replication(spec: SimulationSpec, replication: int) -> ReplicationOutcome:
    """Generate, mask, impute and fit every method; a pure function of (spec, replication)."""
    truth = ground_truth()
    full = generate_dataset(
        spec.model, spec.n_per_env, spec.master_seed, replication, STREAM_DATA
    )
    masked = full.replace_environments(
        [
            apply_mcar(
                env,
                spec.missing_ratio,
                derive_rng(spec.master_seed, replication, STREAM_MASK, position),
            )
            for position, env in enumerate(full.environments)
        ]
    )
    imputations, eta_hat = _imputations(spec, full, masked, replication)

    records: list[ReplicationRecord] = []
    failures: list[ReplicationFailure] = []
    for method in spec.methods:
        data = full if method is Method.ORACLE else masked
        try:
            fitter = MethodFitter(method, data, imputations)
            for variant in spec.variants:
                for gamma in spec.gammas:
                    result = fitter.fit(spec.search_config(gamma, variant))
                    records.append(
                        ReplicationRecord(
                            scenario=spec.scenario,
                            replication=replication,
                            method=method.value,
                            variant=variant.value,
                            gamma=gamma,
                            fdr=compute_fdr(result.support, truth),
                            l2_error=compute_l2_error(result.beta, truth),
                            support=result.support.indices,
                        )
                    )
        except IAEIError as e:
            logger.warning(
                f"Replication {replication}: method {method.value} failed: {e}"
            )
            failures.append(
                ReplicationFailure(spec.scenario, replication, method.value, str(e))
            )
    logger.debug(f"Replication {replication} of {spec.scenario} done")
    return ReplicationOutcome(
        replication=replication,
        records=tuple(records),
        failures=tuple(failures),
        eta_hat=dict(eta_hat),
    )


def _safe_replication(spec: SimulationSpec, replication: int) -> ReplicationOutcome:
    try:
        return run_replication(spec, replication)
    except IAEIError as e:
        logger.warning(f"Replication {replication} of {spec.scenario} failed: {e}")
        return ReplicationOutcome(
            replication=replication,
            records=(),
            failures=tuple(
                ReplicationFailure(spec.scenario, replication, m.value, str(e))
                for m in spec.methods
            ),
            eta_hat={},
        )


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    mean = float(column_means(np.array(values)))
    if len(values) < 2:
        return mean, 0.0
    deviations = np.array(values) - mean
    return mean, float(np.sqrt(column_means(deviations**2) * len(values) / (len(values) - 1)))


@dataclass(frozen=True)
class CellSummary:
    """Aggregated metrics of one (scenario, method, variant, gamma) cell."""

    model: str
    n_per_env: int
    missing_ratio: float
    imputer_family: str
    strategy: str
    method: str
    variant: str
    gamma: float
    replications: int
    failures: int
    fdr_mean: float
    fdr_sd: float
    l2_mean: float
    l2_sd: float
    selection_frequency: tuple[float, ...]

    @property
    def scenario(self) -> tuple:
        return (
            self.model,
            self.n_per_env,
            self.missing_ratio,
            self.imputer_family,
            self.strategy,
        )

    def mean(self, metric: str) -> float:
        if metric == "fdr":
            return self.fdr_mean
        if metric == "l2_error":
            return self.l2_mean
        raise ValidationError(f"Unknown metric '{metric}'; expected one of {METRICS}")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_per_env": self.n_per_env,
            "missing_ratio": self.missing_ratio,
            "imputer_family": self.imputer_family,
            "strategy": self.strategy,
            "method": self.method,
            "variant": self.variant,
            "gamma": self.gamma,
            "replications": self.replications,
            "failures": self.failures,
            "fdr_mean": self.fdr_mean,
            "fdr_sd": self.fdr_sd,
            "l2_mean": self.l2_mean,
            "l2_sd": self.l2_sd,
            "selection_frequency": list(self.selection_frequency),
        }


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Replication records of one or more scenarios plus their provenance."""

    specs: tuple[SimulationSpec, ...]
    records: tuple[ReplicationRecord, ...]
    failures: tuple[ReplicationFailure, ...] = ()
    eta_hat: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "records",
            tuple(sorted(self.records, key=lambda r: (r.cell, r.replication))),
        )
        object.__setattr__(
            self,
            "failures",
            tuple(sorted(self.failures, key=lambda f: (f.scenario, f.replication, f.method))),
        )

    def _cell_keys(self) -> list[tuple]:
        keys = set()
        for spec in self.specs:
            for method in spec.methods:
                for variant in spec.variants:
                    for gamma in spec.gammas:
                        keys.add(spec.scenario + (method.value, variant.value, gamma))
        return sorted(keys)

    def cells(self) -> list[CellSummary]:
        p = settings.N_COVARIATES
        grouped: dict[tuple, list[ReplicationRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.cell, []).append(record)
        failed: dict[tuple, int] = {}
        for failure in self.failures:
            key = failure.scenario + (failure.method,)
            failed[key] = failed.get(key, 0) + 1

        summaries = []
        for key in self._cell_keys():
            records = grouped.get(key, [])
            fdr_mean, fdr_sd = _mean_sd([r.fdr for r in records])
            l2_mean, l2_sd = _mean_sd([r.l2_error for r in records])
            counts = np.zeros(p)
            for record in records:
                for j in record.support:
                    counts[j - 1] += 1
            frequency = counts / len(records) if records else np.full(p, float("nan"))
            model, n, ratio, family, strategy, method, variant, gamma = key
            summaries.append(
                CellSummary(
                    model=model,
                    n_per_env=n,
                    missing_ratio=ratio,
                    imputer_family=family,
                    strategy=strategy,
                    method=method,
                    variant=variant,
                    gamma=gamma,
                    replications=len(records),
                    failures=failed.get(key[:5] + (method,), 0),
                    fdr_mean=fdr_mean,
                    fdr_sd=fdr_sd,
                    l2_mean=l2_mean,
                    l2_sd=l2_sd,
                    selection_frequency=tuple(float(f) for f in frequency),
                )
            )
        return summaries

    def best_cells(self, metric: str = "fdr") -> list[CellSummary]:
        """Per (scenario, method, variant), the gamma with the lowest mean metric."""
        best: dict[tuple, CellSummary] = {}
        for cell in self.cells():
            value = cell.mean(metric)
            if np.isnan(value):
                continue
            key = cell.scenario + (cell.method, cell.variant)
            # cells are sorted by gamma, so strict < keeps the smallest gamma on ties
            if key not in best or value < best[key].mean(metric):
                best[key] = cell
        return [best[key] for key in sorted(best)]

    def eta_hat_summary(self) -> list[dict]:
        """Mean imputation residual size per (scenario, environment) over replications."""
        grouped: dict[tuple, list[float]] = {}
        for scenario, _, per_env in self.eta_hat:
            for env_id, eta in per_env.items():
                grouped.setdefault((scenario, env_id), []).append(float(eta))
        return [
            {
                "scenario": list(scenario),
                "env_id": env_id,
                "replications": len(values),
                "eta_hat_mean": exact_sum(values) / len(values),
            }
            for (scenario, env_id), values in sorted(grouped.items())
        ]

    def merge(self, other: "SimulationReport") -> "SimulationReport":
        """Union of two reports; a replication may appear in only one of them."""
        seen = {(r.scenario, r.replication) for r in self.records}
        seen |= {(f.scenario, f.replication) for f in self.failures}
        theirs = {(r.scenario, r.replication) for r in other.records}
        theirs |= {(f.scenario, f.replication) for f in other.failures}
        overlap = seen & theirs
        if overlap:
            raise ValidationError(
                f"Cannot merge reports sharing replications {sorted(overlap)[:5]}"
            )
        return SimulationReport(
            specs=self.specs + other.specs,
            records=self.records + other.records,
            failures=self.failures + other.failures,
            eta_hat=self.eta_hat + other.eta_hat,
        )

    def to_dict(self) -> dict:
        runs = sorted(
            (spec.to_dict() for spec in self.specs),
            key=lambda d: (
                d["model"],
                d["n_per_env"],
                d["missing_ratio"],
                d["imputer"]["family"],
                d["imputer"]["strategy"],
                d["first_replication"],
            ),
        )
        return {
            "schema": settings.REPORT_SCHEMA,
            "kind": "simulation",
            "provenance": {
                "runs": runs,
                "streams": {
                    "data": STREAM_DATA,
                    "mask": STREAM_MASK,
                    "imputer_training": STREAM_TRAINING,
                    "imputer_randomness": STREAM_IMPUTER,
                },
                "imputation": self.eta_hat_summary(),
            },
            "cells": [cell.to_dict() for cell in self.cells()],
            "failures": [
                {
                    "scenario": list(f.scenario),
                    "replication": f.replication,
                    "method": f.method,
                    "error": f.error,
                }
                for f in self.failures
            ],
        }


def run_studies(specs: Iterable[SimulationSpec], threads: int = 1) -> SimulationReport:
    """Run every replication of every scenario; results do not depend on ``threads``."""
    specs = tuple(specs)
    if not specs:
        raise ValidationError("A study needs at least one scenario")
    jobs = [(spec, index) for spec in specs for index in spec.replication_indices]
    logger.info(
        f"Starting study: {len(specs)} scenario(s), {len(jobs)} replication(s), "
        f"{threads} thread(s)"
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda job: _safe_replication(*job), jobs))
    else:
        outcomes = [_safe_replication(spec, index) for spec, index in jobs]

    records, failures, eta_hat = [], [], []
    for (spec, _), outcome in zip(jobs, outcomes):
        records.extend(outcome.records)
        failures.extend(outcome.failures)
        eta_hat.append((spec.scenario, outcome.replication, outcome.eta_hat))
    if failures:
        logger.warning(f"{len(failures)} method fit(s) failed; affected cells are flagged")
    logger.info(f"Study finished with {len(records)} fitted estimators")
    return SimulationReport(
        specs=specs, records=tuple(records), failures=tuple(failures), eta_hat=tuple(eta_hat)
    )


def run_study(spec: SimulationSpec, threads: int = 1) -> SimulationReport:
    """Aggregate every replication of one scenario over the full method/variant/gamma grid."""
    return run_studies([spec], threads=threads)
