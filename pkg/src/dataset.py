"""Data model for multi-environment, partially labeled regression data."""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from src.errors import (
    DimensionMismatch,
    NoLabels,
    NonFinite,
    NonPositiveWeight,
    ValidationError,
)
from src.utils import exact_sum

logger = logging.getLogger(__name__)


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Support:
    """Sorted, duplicate-free set of 1-based covariate indices."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        if any(i < 1 for i in indices):
            raise ValidationError(f"Support indices must be >= 1, got {indices}")
        if any(a >= b for a, b in zip(indices, indices[1:])):
            raise ValidationError(
                f"Support indices must be strictly increasing, got {indices}"
            )
        object.__setattr__(self, "indices", indices)

    @classmethod
    def of(cls, indices: Iterable[int], p: Optional[int] = None) -> "Support":
        """Build a support from any iterable of 1-based indices."""
        support = cls(tuple(sorted(set(int(i) for i in indices))))
        if p is not None:
            support.check_within(p)
        return support

    @classmethod
    def from_zero_based(cls, positions: Iterable[int]) -> "Support":
        return cls.of(int(i) + 1 for i in positions)

    def check_within(self, p: int) -> None:
        if self.indices and self.indices[-1] > p:
            raise DimensionMismatch(
                f"Support {list(self.indices)} exceeds covariate dimension p={p}"
            )

    @property
    def zero_based(self) -> np.ndarray:
        return np.array([i - 1 for i in self.indices], dtype=int)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __str__(self) -> str:
        return "{" + ",".join(str(i) for i in self.indices) + "}"


@dataclass(frozen=True, eq=False)
class EnvironmentData:
    """
    One environment: N covariate rows, of which n carry a gold-standard label.

    Labels are stored only for labeled rows, in storage order. There is no
    slot for an unlabeled outcome, so a missing label cannot leak into an
    objective as a number.
    """

    env_id: str
    covariates: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    weight: Optional[float] = None

    def __post_init__(self):
        covariates = _frozen_array(self.covariates)
        if covariates.ndim == 1:
            covariates = _frozen_array(covariates.reshape(-1, 1))
        if covariates.ndim != 2:
            raise DimensionMismatch(
                f"Environment '{self.env_id}': covariates must be a matrix, "
                f"got shape {covariates.shape}"
            )
        mask = _frozen_array(self.label_mask, dtype=bool).reshape(-1)
        labels = _frozen_array(self.labels).reshape(-1)
        if mask.shape[0] != covariates.shape[0]:
            raise DimensionMismatch(
                f"Environment '{self.env_id}': mask length {mask.shape[0]} "
                f"does not match {covariates.shape[0]} rows"
            )
        if labels.shape[0] != int(mask.sum()):
            raise DimensionMismatch(
                f"Environment '{self.env_id}': {labels.shape[0]} labels for "
                f"{int(mask.sum())} labeled rows"
            )
        object.__setattr__(self, "env_id", str(self.env_id))
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "label_mask", mask)
        object.__setattr__(self, "labels", labels)
        if self.weight is not None:
            object.__setattr__(self, "weight", float(self.weight))

    @classmethod
    def from_outcomes(
        cls,
        env_id: str,
        covariates,
        outcomes,
        label_mask=None,
        weight: Optional[float] = None,
    ) -> "EnvironmentData":
        """
        Build an environment from a full-length outcome vector.

        Entries of ``outcomes`` at unlabeled rows are ignored, whatever they
        hold. Without a mask every row is labeled.
        """
        outcomes = np.asarray(outcomes, dtype=float).reshape(-1)
        if label_mask is None:
            label_mask = np.ones(outcomes.shape[0], dtype=bool)
        label_mask = np.asarray(label_mask, dtype=bool).reshape(-1)
        if label_mask.shape[0] != outcomes.shape[0]:
            raise DimensionMismatch(
                f"Environment '{env_id}': {outcomes.shape[0]} outcomes for "
                f"{label_mask.shape[0]} mask entries"
            )
        return cls(
            env_id=env_id,
            covariates=covariates,
            labels=outcomes[label_mask],
            label_mask=label_mask,
            weight=weight,
        )

    @property
    def N(self) -> int:
        return int(self.covariates.shape[0])

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def m(self) -> int:
        return self.N - self.n

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def labeled_covariates(self) -> np.ndarray:
        return self.covariates[self.label_mask]

    @property
    def unlabeled_covariates(self) -> np.ndarray:
        return self.covariates[~self.label_mask]

    @property
    def fully_labeled(self) -> bool:
        return self.m == 0

    def outcome(self, row: int) -> float:
        """Label of storage row ``row``; reading an unlabeled row is a bug."""
        assert self.label_mask[row], (
            f"Environment '{self.env_id}': row {row} has no observed outcome"
        )
        return float(self.labels[int(np.count_nonzero(self.label_mask[:row]))])

    def with_labels(self, outcomes, label_mask=None) -> "EnvironmentData":
        """Same covariates and weight, new full-length outcomes and mask."""
        return EnvironmentData.from_outcomes(
            self.env_id, self.covariates, outcomes, label_mask, self.weight
        )

    def subset(self, rows) -> "EnvironmentData":
        """Environment restricted to the given storage rows (kept in order)."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        label_pos = np.cumsum(self.label_mask) - 1
        keep_mask = self.label_mask[rows]
        return EnvironmentData(
            env_id=self.env_id,
            covariates=self.covariates[rows],
            labels=self.labels[label_pos[rows][keep_mask]],
            label_mask=keep_mask,
            weight=self.weight,
        )


@dataclass(frozen=True, eq=False)
class MultiEnvDataset:
    """Ordered collection of environments sharing the covariate dimension p."""

    environments: tuple[EnvironmentData, ...]
    p: int
    normalized_weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "environments", tuple(self.environments))
        object.__setattr__(self, "p", int(self.p))
        if self.normalized_weights is not None:
            object.__setattr__(
                self, "normalized_weights", _frozen_array(self.normalized_weights)
            )

    @classmethod
    def from_environments(
        cls, environments: Sequence[EnvironmentData], p: Optional[int] = None
    ) -> "MultiEnvDataset":
        environments = tuple(environments)
        if p is None:
            if not environments:
                raise ValidationError("A dataset needs at least one environment")
            p = environments[0].p
        return cls(environments=environments, p=p)

    @property
    def validated(self) -> bool:
        return self.normalized_weights is not None

    @property
    def env_ids(self) -> list[str]:
        return [env.env_id for env in self.environments]

    @property
    def raw_weights(self) -> np.ndarray:
        """Weights as given; unspecified weights default to 1/|E|."""
        default = 1.0 / len(self.environments)
        return np.array(
            [default if env.weight is None else env.weight for env in self.environments]
        )

    def weights(self) -> np.ndarray:
        """Normalized weights (sum to 1) consumed by every objective."""
        if self.normalized_weights is None:
            return validate_dataset(self).normalized_weights
        return self.normalized_weights

    def get(self, env_id: str) -> EnvironmentData:
        for env in self.environments:
            if env.env_id == str(env_id):
                return env
        raise KeyError(f"No environment '{env_id}'")

    def replace_environments(
        self, environments: Sequence[EnvironmentData]
    ) -> "MultiEnvDataset":
        """New, unvalidated dataset with the given environments and same p."""
        return MultiEnvDataset(environments=tuple(environments), p=self.p)

    def __len__(self) -> int:
        return len(self.environments)

    def __iter__(self) -> Iterator[EnvironmentData]:
        return iter(self.environments)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True invariant support S* and coefficient vector beta*."""

    support_star: Support
    beta_star: np.ndarray

    def __post_init__(self):
        beta = _frozen_array(self.beta_star).reshape(-1)
        object.__setattr__(self, "beta_star", beta)
        expected = Support.from_zero_based(np.flatnonzero(beta != 0))
        if expected != self.support_star:
            raise ValidationError(
                f"support_star {self.support_star} does not match the nonzero "
                f"entries of beta_star {expected}"
            )

    @classmethod
    def from_beta(cls, beta) -> "GroundTruth":
        beta = np.asarray(beta, dtype=float)
        return cls(Support.from_zero_based(np.flatnonzero(beta != 0)), beta)

    @property
    def p(self) -> int:
        return int(self.beta_star.shape[0])


@dataclass(frozen=True, eq=False)
class FitResult:
    """Selected support, coefficients and the objective decomposition."""

    support: Support
    beta: np.ndarray
    objective: float
    loss_part: float
    penalty_part: float
    gamma: float
    method: str
    penalty_variant: str

    def __post_init__(self):
        beta = _frozen_array(self.beta).reshape(-1)
        off_support = np.ones(beta.shape[0], dtype=bool)
        off_support[self.support.zero_based] = False
        if np.any(beta[off_support] != 0):
            raise ValidationError("FitResult beta must be zero off its support")
        object.__setattr__(self, "beta", beta)

    def to_dict(self) -> dict:
        """Report record with a fixed key order."""
        return {
            "method": self.method,
            "variant": self.penalty_variant,
            "gamma": float(self.gamma),
            "support": list(self.support.indices),
            "beta": [float(b) for b in self.beta],
            "objective": float(self.objective),
            "loss_part": float(self.loss_part),
            "penalty_part": float(self.penalty_part),
        }


def _validate_environment(env: EnvironmentData, p: int) -> None:
    if env.p != p:
        raise DimensionMismatch(
            f"Environment '{env.env_id}' has p={env.p}, expected p={p}"
        )
    if env.n < 1:
        raise NoLabels(f"Environment '{env.env_id}' has no labeled rows")
    if not np.all(np.isfinite(env.covariates)):
        raise NonFinite(f"Environment '{env.env_id}' has non-finite covariates")
    if not np.all(np.isfinite(env.labels)):
        raise NonFinite(f"Environment '{env.env_id}' has non-finite labeled outcomes")
    if env.weight is not None and not (np.isfinite(env.weight) and env.weight > 0):
        raise NonPositiveWeight(
            f"Environment '{env.env_id}' has weight {env.weight}; weights must be > 0"
        )


def validate_dataset(data: MultiEnvDataset, min_environments: int = 1) -> MultiEnvDataset:
    """
    Check every type invariant and attach the normalized-weight view.

    Validating an already validated dataset returns it unchanged.
    """
    if len(data.environments) < min_environments:
        raise ValidationError(
            f"Need at least {min_environments} environment(s), got {len(data.environments)}"
        )
    if data.validated:
        return data
    if not data.environments:
        raise ValidationError("A dataset needs at least one environment")

    ids = data.env_ids
    if len(set(ids)) != len(ids):
        raise ValidationError(f"Environment ids must be unique, got {ids}")
    for env in data.environments:
        _validate_environment(env, data.p)

    raw = data.raw_weights
    normalized = raw / exact_sum(raw.tolist())
    logger.debug(
        f"Validated dataset: {len(ids)} environments, p={data.p}, "
        f"weights={normalized.tolist()}"
    )
    return replace(data, normalized_weights=normalized)


def missing_ratio(env: EnvironmentData) -> float:
    """Empirical ratio of missing outcomes (N - n) / N."""
    return (env.N - env.n) / env.N
