"""
Empirical loss and penalty functionals, complete-data and imputation-adjusted.

All row averages use correctly rounded sums (see ``src.utils.column_means``)
and environment contributions are combined with ``math.fsum``, so results do
not depend on the order of rows or environments.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from src.dataset import EnvironmentData, MultiEnvDataset, Support
from src.errors import DimensionMismatch, MissingImputation, ValidationError
from src.utils import column_means, exact_sum

logger = logging.getLogger(__name__)

Imputations = Mapping[str, np.ndarray]


class PenaltyVariant(str, Enum):
    """Basic penalty, or enhanced with the squared-covariate moment."""

    BASIC = "basic"
    ENHANCED = "enhanced"


class ObjectiveMode(str, Enum):
    COMPLETE = "complete"
    ADJUSTED = "adjusted"


@dataclass(frozen=True)
class ObjectiveValue:
    loss: float
    penalty: float
    total: float
    gamma: float


def _check_beta(data: MultiEnvDataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.p:
        raise DimensionMismatch(
            f"beta has length {beta.shape[0]}, dataset has p={data.p}"
        )
    return beta


def _check_support(data: MultiEnvDataset, support: Support) -> np.ndarray:
    support.check_within(data.p)
    return support.zero_based


def predictions_for(env: EnvironmentData, imputations: Optional[Imputations]) -> np.ndarray:
    """Per-row predictions for ``env``; every row must have a finite value."""
    if imputations is None or env.env_id not in imputations:
        raise MissingImputation(f"No imputations for environment '{env.env_id}'")
    predictions = np.asarray(imputations[env.env_id], dtype=float).reshape(-1)
    if predictions.shape[0] != env.N:
        raise MissingImputation(
            f"Environment '{env.env_id}': {predictions.shape[0]} predictions "
            f"for {env.N} rows"
        )
    if not np.all(np.isfinite(predictions)):
        raise MissingImputation(
            f"Environment '{env.env_id}': some rows lack a finite prediction"
        )
    return predictions


def _weighted_total(weights: np.ndarray, terms: list[float]) -> float:
    return exact_sum(float(w) * float(t) for w, t in zip(weights, terms))


def empirical_loss(data: MultiEnvDataset, beta) -> float:
    """Pooled squared loss over labeled rows, weighted across environments."""
    beta = _check_beta(data, beta)
    terms = []
    for env in data.environments:
        residual = env.labels - env.labeled_covariates @ beta
        terms.append(float(column_means(residual**2)))
    return _weighted_total(data.weights(), terms)


def adjusted_loss(data: MultiEnvDataset, imputations: Imputations, beta) -> float:
    """
    Imputation bias-corrected pooled loss.

    Per environment: the all-row average of (h - b'x)^2 plus the labeled-row
    average of (y - b'x)^2 - (h - b'x)^2. Not clamped; may be negative.
    """
    beta = _check_beta(data, beta)
    terms = []
    for env in data.environments:
        predictions = predictions_for(env, imputations)
        fitted = env.covariates @ beta
        labeled_fit = fitted[env.label_mask]
        labeled_pred = predictions[env.label_mask]
        pooled = column_means((predictions - fitted) ** 2)
        correction = column_means(
            (env.labels - labeled_fit) ** 2 - (labeled_pred - labeled_fit) ** 2
        )
        terms.append(float(pooled) + float(correction))
    return _weighted_total(data.weights(), terms)


def residual_moments(
    data: MultiEnvDataset,
    beta,
    imputations: Optional[Imputations] = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    Per-environment covariate/residual moments, one entry per coordinate.

    Returns ``(linear, squared)`` per environment where ``linear[j]`` estimates
    E[x_j (y - b'x)] and ``squared[j]`` estimates E[x_j^2 (y - b'x)]. Without
    imputations the labeled rows are used; with imputations the debiased form
    E_N[x_j (h - b'x)] + E_n[x_j (y - h)] is used.
    """
    beta = _check_beta(data, beta)
    moments = []
    for env in data.environments:
        if imputations is None:
            x = env.labeled_covariates
            residual = env.labels - x @ beta
            linear = column_means(x * residual[:, None])
            squared = column_means(x**2 * residual[:, None])
        else:
            predictions = predictions_for(env, imputations)
            x = env.covariates
            x_lab = env.labeled_covariates
            pooled_res = predictions - x @ beta
            label_gap = env.labels - predictions[env.label_mask]
            linear = column_means(x * pooled_res[:, None]) + column_means(
                x_lab * label_gap[:, None]
            )
            squared = column_means(x**2 * pooled_res[:, None]) + column_means(
                x_lab**2 * label_gap[:, None]
            )
        moments.append((np.atleast_1d(linear), np.atleast_1d(squared)))
    return moments


def _penalty_from_moments(
    data: MultiEnvDataset,
    moments: list[tuple[np.ndarray, np.ndarray]],
    positions: np.ndarray,
    variant: PenaltyVariant,
) -> float:
    variant = PenaltyVariant(variant)
    if positions.size == 0:
        return 0.0
    terms = []
    for linear, squared in moments:
        per_env = [float(linear[j]) ** 2 for j in positions]
        if variant is PenaltyVariant.ENHANCED:
            per_env += [float(squared[j]) ** 2 for j in positions]
        terms.append(exact_sum(per_env))
    return _weighted_total(data.weights(), terms)


def empirical_penalty(
    data: MultiEnvDataset,
    beta,
    support: Support,
    variant: PenaltyVariant = PenaltyVariant.BASIC,
) -> float:
    """Invariance penalty over labeled rows, summed over j in ``support``."""
    positions = _check_support(data, support)
    moments = residual_moments(data, beta)
    return _penalty_from_moments(data, moments, positions, variant)


def adjusted_penalty(
    data: MultiEnvDataset,
    imputations: Imputations,
    beta,
    support: Support,
    variant: PenaltyVariant = PenaltyVariant.BASIC,
) -> float:
    """Invariance penalty built from the debiased covariate/residual moments."""
    positions = _check_support(data, support)
    moments = residual_moments(data, beta, imputations)
    return _penalty_from_moments(data, moments, positions, variant)


def objective(
    data: MultiEnvDataset,
    beta,
    support: Support,
    gamma: float,
    mode: ObjectiveMode = ObjectiveMode.COMPLETE,
    imputations: Optional[Imputations] = None,
    variant: PenaltyVariant = PenaltyVariant.BASIC,
) -> ObjectiveValue:
    """Loss plus gamma times penalty, in complete or adjusted mode."""
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    mode = ObjectiveMode(mode)
    if mode is ObjectiveMode.ADJUSTED:
        if imputations is None:
            raise MissingImputation("Adjusted mode requires imputations")
        loss = adjusted_loss(data, imputations, beta)
        penalty = adjusted_penalty(data, imputations, beta, support, variant)
    else:
        loss = empirical_loss(data, beta)
        penalty = empirical_penalty(data, beta, support, variant)
    return ObjectiveValue(
        loss=loss, penalty=penalty, total=loss + gamma * penalty, gamma=float(gamma)
    )
