"""
Leave-one-month-out cross-validation with per-day gamma selection.

Each fold trains every method on the other months and predicts the held-out
month row by row. Squared errors are averaged within each calendar day, then
across folds by day of month, so day 31 is averaged only over the months
that have one.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

import settings
from src.data_io import covariate_columns, parse_numeric, require_columns
from src.dataset import EnvironmentData, MultiEnvDataset
from src.errors import InsufficientMonths, ParseError, ValidationError
from src.estimators import Method, MethodFitter
from src.imputation import ImputerSpec, build_strategy, impute_dataset
from src.objectives import PenaltyVariant
from src.optimizer import SearchConfig
from src.sem import masked_count
from src.utils import derive_rng, exact_sum

logger = logging.getLogger(__name__)

# Stream tag of the evaluation-outcome mask
STREAM_CV_MASK = 10


@dataclass(frozen=True)
class CvConfig:
    gammas: tuple[float, ...] = settings.DEFAULT_GAMMAS
    methods: tuple[Method, ...] = tuple(Method)
    variants: tuple[PenaltyVariant, ...] = (PenaltyVariant.BASIC,)
    mask_rate: float = settings.CV_MASK_RATE
    env_column: str = settings.CV_ENV_COLUMN
    date_column: str = settings.CV_DATE_COLUMN
    outcome_column: str = settings.CSV_OUTCOME_COLUMN
    prefix: str = settings.CSV_COVARIATE_PREFIX
    imputer: ImputerSpec = field(default_factory=ImputerSpec)
    seed: int = settings.DEFAULT_MASTER_SEED
    max_support_dim: int = settings.DEFAULT_MAX_SUPPORT_DIM

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(sorted(float(g) for g in self.gammas)))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(
            self, "variants", tuple(PenaltyVariant(v) for v in self.variants)
        )
        if not (self.gammas and self.methods and self.variants):
            raise ValidationError("gammas, methods and variants must be nonempty")
        if any(g < 0 for g in self.gammas):
            raise ValidationError(f"gammas must be >= 0, got {self.gammas}")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ValidationError(f"mask_rate must be in [0, 1), got {self.mask_rate}")


@dataclass(frozen=True)
class FoldTrace:
    """One held-out month: sizes, and support and daily MSE of every fit."""

    month: str
    n_train: int
    n_test: int
    env_ids: tuple[str, ...]
    # (method, variant, gamma) -> (support, {day: mse})
    fits: dict

    def to_dict(self) -> dict:
        return {
            "month": self.month,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "env_ids": list(self.env_ids),
            "fits": [
                {
                    "method": method,
                    "variant": variant,
                    "gamma": gamma,
                    "support": list(support),
                    "daily_mse": {str(day): mse for day, mse in sorted(daily.items())},
                }
                for (method, variant, gamma), (support, daily) in sorted(self.fits.items())
            ],
        }


@dataclass(frozen=True, eq=False)
class CvResult:
    environment_column: str
    gammas: tuple[float, ...]
    days: tuple[int, ...]
    day_counts: tuple[int, ...]
    # (method, variant, gamma) -> per-day mean MSE aligned with ``days``
    mse_by_gamma: dict
    # (method, variant) -> per-day MSE at the chosen gamma
    daily_mse: dict
    chosen_gamma: dict
    folds: tuple[FoldTrace, ...]

    @property
    def months(self) -> list[str]:
        return [fold.month for fold in self.folds]

    def to_dict(self) -> dict:
        curves = []
        for method, variant in sorted(self.daily_mse):
            curves.append(
                {
                    "method": method,
                    "variant": variant,
                    "daily_mse": [float(v) for v in self.daily_mse[(method, variant)]],
                    "chosen_gamma": [float(g) for g in self.chosen_gamma[(method, variant)]],
                    "by_gamma": [
                        {
                            "gamma": gamma,
                            "daily_mse": [
                                float(v) for v in self.mse_by_gamma[(method, variant, gamma)]
                            ],
                        }
                        for gamma in self.gammas
                    ],
                }
            )
        return {
            "schema": settings.REPORT_SCHEMA,
            "kind": "cv",
            "environment_column": self.environment_column,
            "months": self.months,
            "gammas": list(self.gammas),
            "days": list(self.days),
            "day_counts": list(self.day_counts),
            "curves": curves,
            "folds": [fold.to_dict() for fold in self.folds],
        }


def select_gamma(table: Mapping[float, Sequence[float]]) -> list[float]:
    """Per day, the gamma with the lowest MSE; exact ties go to the smaller gamma."""
    if not table:
        raise ValidationError("select_gamma needs a nonempty gamma grid")
    gammas = sorted(table)
    days = len(table[gammas[0]])
    chosen = []
    for day in range(days):
        best_gamma, best_value = gammas[0], float(table[gammas[0]][day])
        for gamma in gammas[1:]:
            value = float(table[gamma][day])
            if np.isnan(best_value) or value < best_value:
                best_gamma, best_value = gamma, value
        chosen.append(best_gamma)
    return chosen


def daily_quantile_curve(
    result: CvResult, method, variant=PenaltyVariant.BASIC
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted daily MSEs at the chosen gamma with normalized ranks in (0, 1]."""
    key = (Method(method).value, PenaltyVariant(variant).value)
    if key not in result.daily_mse:
        raise ValidationError(f"No CV curve for method {key[0]} ({key[1]})")
    values = np.asarray(result.daily_mse[key], dtype=float)
    values = np.sort(values[np.isfinite(values)])
    ranks = np.arange(1, values.shape[0] + 1) / max(values.shape[0], 1)
    return values, ranks


def _parse_dates(frame: pd.DataFrame, column: str) -> pd.Series:
    dates = pd.to_datetime(frame[column].astype(str).str.strip(), errors="coerce")
    if dates.isna().any():
        position = int(np.flatnonzero(dates.isna().to_numpy())[0])
        raise ParseError(
            f"Cannot parse '{frame[column].iloc[position]}' as a date",
            row=position + 2,
            column=column,
        )
    return dates


def _environments(
    env_values: np.ndarray,
    covariates: np.ndarray,
    outcomes: np.ndarray,
    observed: np.ndarray,
    rows: np.ndarray,
) -> MultiEnvDataset:
    environments = []
    for env_id in sorted(set(env_values[rows].tolist())):
        env_rows = rows[env_values[rows] == env_id]
        environments.append(
            EnvironmentData.from_outcomes(
                env_id=env_id,
                covariates=covariates[env_rows],
                outcomes=np.where(observed[env_rows], outcomes[env_rows], 0.0),
                label_mask=observed[env_rows],
            )
        )
    return MultiEnvDataset.from_environments(environments, p=covariates.shape[1])


class _FoldRunner:
    """Shared, read-only inputs of every fold."""

    def __init__(self, frame: pd.DataFrame, models: Mapping, config: CvConfig):
        self.config = config
        self.models = models
        columns = covariate_columns(frame, config.prefix)
        self.covariates = np.column_stack([parse_numeric(frame, c) for c in columns])
        self.outcomes = parse_numeric(frame, config.outcome_column, allow_empty=True)
        self.labeled = np.isfinite(self.outcomes)
        self.env_values = frame[config.env_column].astype(str).str.strip().to_numpy()

        dates = _parse_dates(frame, config.date_column)
        self.months = dates.dt.to_period("M").astype(str).to_numpy()
        self.days = dates.dt.day.to_numpy()

        labeled_rows = np.flatnonzero(self.labeled)
        hidden = derive_rng(config.seed, STREAM_CV_MASK).choice(
            labeled_rows,
            size=masked_count(labeled_rows.shape[0], config.mask_rate),
            replace=False,
        )
        self.observed = self.labeled.copy()
        self.observed[hidden] = False
        logger.info(
            f"Masked {hidden.shape[0]} of {labeled_rows.shape[0]} evaluation outcomes "
            f"(rate {config.mask_rate})"
        )

    def run(self, month: str) -> FoldTrace:
        config = self.config
        train = np.flatnonzero(self.months != month)
        test = np.flatnonzero((self.months == month) & self.labeled)

        masked = _environments(
            self.env_values, self.covariates, self.outcomes, self.observed, train
        )
        full = _environments(
            self.env_values, self.covariates, self.outcomes, self.labeled, train
        )
        needs_imputations = any(m.needs_imputations for m in config.methods)
        imputations = impute_dataset(self.models, masked)[0] if needs_imputations else None

        x_test = self.covariates[test]
        y_test = self.outcomes[test]
        test_days = self.days[test]
        fits = {}
        for method in config.methods:
            data = full if method is Method.ORACLE else masked
            fitter = MethodFitter(method, data, imputations)
            for variant in config.variants:
                for gamma in config.gammas:
                    result = fitter.fit(
                        SearchConfig(
                            gamma=gamma,
                            variant=variant,
                            max_support_dim=config.max_support_dim,
                        )
                    )
                    errors = (y_test - x_test @ result.beta) ** 2
                    daily = {
                        int(day): float(np.mean(errors[test_days == day]))
                        for day in np.unique(test_days)
                    }
                    fits[(method.value, variant.value, gamma)] = (
                        result.support.indices,
                        daily,
                    )
        logger.info(
            f"Fold {month}: trained on {train.shape[0]} rows, scored {test.shape[0]} rows"
        )
        return FoldTrace(
            month=month,
            n_train=int(train.shape[0]),
            n_test=int(test.shape[0]),
            env_ids=tuple(masked.env_ids),
            fits=fits,
        )


def monthly_cv(
    frame: pd.DataFrame,
    history: MultiEnvDataset,
    config: Optional[CvConfig] = None,
    threads: int = 1,
) -> CvResult:
    """
    Run the monthly harness on ``frame`` with an imputer trained on ``history``.

    ``frame`` needs the date, environment, outcome and covariate columns;
    ``history`` is the separately designated imputer training data.
    """
    config = config or CvConfig()
    require_columns(frame, [config.date_column, config.env_column, config.outcome_column])
    logger.warning(
        f"CV environments are defined by column '{config.env_column}'"
    )

    models = {}
    if any(m.needs_imputations for m in config.methods):
        sources = {
            env.env_id: (env.labeled_covariates, env.labels) for env in history.environments
        }
        models = build_strategy(config.imputer, sources)

    runner = _FoldRunner(frame, models, config)
    months = sorted(set(runner.months.tolist()))
    if len(months) < settings.CV_MIN_MONTHS:
        raise InsufficientMonths(
            f"Monthly cross-validation needs at least {settings.CV_MIN_MONTHS} months, "
            f"got {len(months)}"
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            folds = tuple(pool.map(runner.run, months))
    else:
        folds = tuple(runner.run(month) for month in months)

    days = sorted({day for fold in folds for _, daily in fold.fits.values() for day in daily})
    first_key = next(iter(folds[0].fits))
    day_counts = tuple(
        sum(1 for fold in folds if day in fold.fits[first_key][1]) for day in days
    )

    mse_by_gamma = {}
    for key in folds[0].fits:
        per_day = []
        for day in days:
            values = [fold.fits[key][1][day] for fold in folds if day in fold.fits[key][1]]
            per_day.append(exact_sum(values) / len(values) if values else float("nan"))
        mse_by_gamma[key] = np.array(per_day)

    daily_mse, chosen_gamma = {}, {}
    for method in config.methods:
        for variant in config.variants:
            table = {
                gamma: mse_by_gamma[(method.value, variant.value, gamma)]
                for gamma in config.gammas
            }
            chosen = select_gamma(table)
            chosen_gamma[(method.value, variant.value)] = np.array(chosen)
            daily_mse[(method.value, variant.value)] = np.array(
                [table[gamma][i] for i, gamma in enumerate(chosen)]
            )

    logger.info(f"Monthly CV finished: {len(folds)} folds, {len(days)} days")
    return CvResult(
        environment_column=config.env_column,
        gammas=config.gammas,
        days=tuple(int(d) for d in days),
        day_counts=day_counts,
        mse_by_gamma=mse_by_gamma,
        daily_mse=daily_mse,
        chosen_gamma=chosen_gamma,
        folds=folds,
    )
