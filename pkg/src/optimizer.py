"""
Exact minimization of the complete or imputation-adjusted objective.

For a fixed support S the objective is a convex quadratic in beta_S, so each
support is solved in closed form. All 2^p supports are enumerated (p is
capped by ``SearchConfig.max_support_dim``) and the best one is picked with a
deterministic tie rule: smallest objective within ``settings.TIE_TOLERANCE``,
then fewest covariates, then the lexicographically smallest index set.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy import linalg

import settings
from src.dataset import FitResult, MultiEnvDataset, Support, validate_dataset
from src.errors import (
    MissingImputation,
    SingularSystem,
    TooManyCovariates,
    ValidationError,
)
from src.objectives import (
    Imputations,
    ObjectiveMode,
    PenaltyVariant,
    objective,
    predictions_for,
)
from src.utils import column_means, exact_sum

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Objective restricted to ``support``: 0.5 b'Hb - g'b + c."""

    H: np.ndarray
    g: np.ndarray
    c: float
    support: Support

    def value(self, beta_s) -> float:
        beta_s = np.asarray(beta_s, dtype=float)
        return float(0.5 * beta_s @ self.H @ beta_s - self.g @ beta_s + self.c)


@dataclass(frozen=True)
class SearchConfig:
    gamma: float = settings.DEFAULT_GAMMA
    variant: PenaltyVariant = PenaltyVariant.BASIC
    max_support_dim: int = settings.DEFAULT_MAX_SUPPORT_DIM
    ridge_jitter: float = settings.DEFAULT_RIDGE_JITTER
    # None means every subset of {1..p}
    candidate_supports: Optional[tuple[Support, ...]] = field(default=None)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.max_support_dim < 1:
            raise ValidationError(
                f"max_support_dim must be >= 1, got {self.max_support_dim}"
            )
        if self.ridge_jitter < 0:
            raise ValidationError(
                f"ridge_jitter must be >= 0, got {self.ridge_jitter}"
            )
        object.__setattr__(self, "variant", PenaltyVariant(self.variant))
        if self.candidate_supports is not None:
            object.__setattr__(
                self, "candidate_supports", tuple(self.candidate_supports)
            )


@dataclass(frozen=True, eq=False)
class EnvironmentMoments:
    """
    Sufficient statistics of one environment's objective contribution.

    loss(b)          = c0 - 2 b'u + b'Mb
    linear moments   = u - Mb
    squared moments  = u2 - M2 b,   M2[j, k] = E[x_j^2 x_k]
    """

    env_id: str
    weight: float
    M: np.ndarray
    u: np.ndarray
    c0: float
    M2: np.ndarray
    u2: np.ndarray


def _second_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    outer = x[:, :, None] * x[:, None, :]
    squared_outer = (x**2)[:, :, None] * x[:, None, :]
    return column_means(outer), column_means(squared_outer)


def environment_moments(
    data: MultiEnvDataset,
    mode: ObjectiveMode = ObjectiveMode.COMPLETE,
    imputations: Optional[Imputations] = None,
) -> list[EnvironmentMoments]:
    """Moment summaries for every environment, sorted by environment id."""
    data = validate_dataset(data)
    mode = ObjectiveMode(mode)
    if mode is ObjectiveMode.ADJUSTED and imputations is None:
        raise MissingImputation("Adjusted mode requires imputations")

    summaries = []
    for env, weight in zip(data.environments, data.weights()):
        if mode is ObjectiveMode.COMPLETE:
            x = env.labeled_covariates
            y = env.labels
            M, M2 = _second_moments(x)
            u = column_means(x * y[:, None])
            u2 = column_means(x**2 * y[:, None])
            c0 = float(column_means(y**2))
        else:
            h = predictions_for(env, imputations)
            x = env.covariates
            x_lab = env.labeled_covariates
            gap = env.labels - h[env.label_mask]
            M, M2 = _second_moments(x)
            u = column_means(x * h[:, None]) + column_means(x_lab * gap[:, None])
            u2 = column_means(x**2 * h[:, None]) + column_means(
                x_lab**2 * gap[:, None]
            )
            c0 = float(column_means(h**2)) + float(
                column_means(env.labels**2 - h[env.label_mask] ** 2)
            )
        summaries.append(
            EnvironmentMoments(
                env_id=env.env_id,
                weight=float(weight),
                M=np.atleast_2d(M),
                u=np.atleast_1d(u),
                c0=c0,
                M2=np.atleast_2d(M2),
                u2=np.atleast_1d(u2),
            )
        )
    return sorted(summaries, key=lambda s: s.env_id)


def _restricted_terms(
    summaries: Sequence[EnvironmentMoments],
    index: np.ndarray,
    gamma: float,
    variant: PenaltyVariant,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched (H, g, c) for supports given as a (batch, k) zero-based index array."""
    enhanced = variant is PenaltyVariant.ENHANCED
    rows, cols = index[:, :, None], index[:, None, :]
    H_parts, g_parts, c_parts = [], [], []
    for s in summaries:
        A = s.M[rows, cols]
        u_s = s.u[index]
        A_t = np.swapaxes(A, 1, 2)
        H = 2.0 * A + 2.0 * gamma * (A_t @ A)
        g = 2.0 * u_s + 2.0 * gamma * np.einsum("bjk,bj->bk", A, u_s)
        c = s.c0 + gamma * np.einsum("bj,bj->b", u_s, u_s)
        if enhanced:
            A2 = s.M2[rows, cols]
            u2_s = s.u2[index]
            H = H + 2.0 * gamma * (np.swapaxes(A2, 1, 2) @ A2)
            g = g + 2.0 * gamma * np.einsum("bjk,bj->bk", A2, u2_s)
            c = c + gamma * np.einsum("bj,bj->b", u2_s, u2_s)
        H_parts.append(s.weight * H)
        g_parts.append(s.weight * g)
        c_parts.append(s.weight * c)
    return sum(H_parts), sum(g_parts), sum(c_parts)


def _restricted_values(
    summaries: Sequence[EnvironmentMoments],
    index: np.ndarray,
    beta_s: np.ndarray,
    variant: PenaltyVariant,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched (loss, penalty) at ``beta_s`` without the cancellation of 0.5b'Hb - g'b + c."""
    enhanced = variant is PenaltyVariant.ENHANCED
    rows, cols = index[:, :, None], index[:, None, :]
    losses, penalties = [], []
    for s in summaries:
        A = s.M[rows, cols]
        u_s = s.u[index]
        fitted = np.einsum("bjk,bk->bj", A, beta_s)
        loss = s.c0 - 2.0 * np.einsum("bj,bj->b", u_s, beta_s) + np.einsum(
            "bj,bj->b", beta_s, fitted
        )
        penalty = np.sum((u_s - fitted) ** 2, axis=1)
        if enhanced:
            A2 = s.M2[rows, cols]
            penalty = penalty + np.sum(
                (s.u2[index] - np.einsum("bjk,bk->bj", A2, beta_s)) ** 2, axis=1
            )
        losses.append(s.weight * loss)
        penalties.append(s.weight * penalty)
    return sum(losses), sum(penalties)


def assemble_quadratic(
    data: MultiEnvDataset,
    support: Support,
    gamma: float,
    mode: ObjectiveMode = ObjectiveMode.COMPLETE,
    variant: PenaltyVariant = PenaltyVariant.BASIC,
    imputations: Optional[Imputations] = None,
) -> QuadraticForm:
    """Closed-form quadratic of the objective restricted to ``support``."""
    if len(support) == 0:
        raise ValidationError("assemble_quadratic needs a nonempty support")
    support.check_within(data.p)
    summaries = environment_moments(data, mode, imputations)
    index = support.zero_based[None, :]
    H, g, c = _restricted_terms(summaries, index, gamma, PenaltyVariant(variant))
    H = 0.5 * (H[0] + H[0].T)
    return QuadraticForm(H=H, g=g[0], c=float(c[0]), support=support)


def _well_conditioned(H: np.ndarray) -> bool:
    eigenvalues = np.linalg.eigvalsh(H)
    if not np.all(np.isfinite(eigenvalues)):
        return False
    largest = np.max(np.abs(eigenvalues))
    smallest = np.min(np.abs(eigenvalues))
    if largest == 0.0:
        return False
    return smallest > 0.0 and largest / smallest < settings.MAX_CONDITION_NUMBER


def solve_support(
    qf: QuadraticForm, jitter: float = settings.DEFAULT_RIDGE_JITTER
) -> tuple[np.ndarray, float]:
    """
    Minimize the restricted quadratic by solving H b = g.

    A ridge of ``jitter * trace(H) / p_S`` is added only when the plain solve
    fails or H is numerically singular, then the solve is retried once.
    """
    H, g = qf.H, qf.g
    if not np.any(g):
        beta_s = np.zeros_like(g)
        return beta_s, qf.value(beta_s)

    if _well_conditioned(H):
        try:
            beta_s = linalg.solve(H, g, assume_a="sym")
            if np.all(np.isfinite(beta_s)):
                return beta_s, qf.value(beta_s)
        except (linalg.LinAlgError, ValueError) as e:
            logger.debug(f"Plain solve failed on support {qf.support}: {e}")

    size = H.shape[0]
    ridge = jitter * np.trace(H) / size
    if ridge <= 0.0:
        ridge = jitter if jitter > 0 else np.finfo(float).eps
    logger.debug(f"Jittered solve on support {qf.support} with ridge {ridge:.3e}")
    try:
        beta_s = linalg.solve(H + ridge * np.eye(size), g, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(
            f"Normal equations on support {qf.support} are singular even with "
            f"ridge {ridge:.3e}: {e}"
        ) from e
    if not np.all(np.isfinite(beta_s)):
        raise SingularSystem(
            f"Normal equations on support {qf.support} produced non-finite coefficients"
        )
    return beta_s, qf.value(beta_s)


def _batched_solve(
    H: np.ndarray, g: np.ndarray, index: np.ndarray, c: np.ndarray, jitter: float
) -> np.ndarray:
    """Solve a stack of systems; fall back to ``solve_support`` where needed."""
    eigenvalues = np.linalg.eigvalsh(H)
    largest = np.max(np.abs(eigenvalues), axis=1)
    smallest = np.min(np.abs(eigenvalues), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (smallest > 0) & (largest / smallest < settings.MAX_CONDITION_NUMBER)
    beta = np.zeros_like(g)
    if np.any(ok):
        beta[ok] = np.linalg.solve(H[ok], g[ok][..., None])[..., 0]
    for b in np.flatnonzero(~ok | ~np.all(np.isfinite(beta), axis=1)):
        qf = QuadraticForm(
            H=H[b], g=g[b], c=float(c[b]), support=Support.from_zero_based(index[b])
        )
        beta[b], _ = solve_support(qf, jitter)
    return beta


def _enumerate(p: int) -> Iterator[tuple[int, ...]]:
    for k in range(p + 1):
        yield from itertools.combinations(range(p), k)


def _batches(
    candidates: Iterable[tuple[int, ...]], size: int
) -> Iterator[tuple[int, list[tuple[int, ...]]]]:
    """Group zero-based candidates (already in tie-rule order) by cardinality."""
    for k, group in itertools.groupby(candidates, key=len):
        chunk = []
        for candidate in group:
            chunk.append(candidate)
            if len(chunk) == size:
                yield k, chunk
                chunk = []
        if chunk:
            yield k, chunk


class SupportSearch:
    """
    Support enumeration over one dataset view.

    Moment summaries are computed once, so a whole gamma grid and both
    penalty variants reuse them.
    """

    def __init__(
        self,
        data: MultiEnvDataset,
        mode: ObjectiveMode = ObjectiveMode.COMPLETE,
        imputations: Optional[Imputations] = None,
    ):
        self.data = validate_dataset(data)
        self.mode = ObjectiveMode(mode)
        if self.mode is ObjectiveMode.ADJUSTED and imputations is None:
            raise MissingImputation("Adjusted mode requires imputations")
        self.imputations = imputations if self.mode is ObjectiveMode.ADJUSTED else None
        self.summaries = environment_moments(self.data, self.mode, self.imputations)

    def _candidates(self, config: SearchConfig) -> list[tuple[int, ...]]:
        p = self.data.p
        if config.candidate_supports is None:
            if p > config.max_support_dim:
                raise TooManyCovariates(
                    f"Exhaustive search over p={p} covariates exceeds "
                    f"max_support_dim={config.max_support_dim}"
                )
            return list(_enumerate(p))
        supports = {Support()}
        for support in config.candidate_supports:
            support.check_within(p)
            supports.add(support)
        ordered = sorted(supports, key=lambda s: (len(s), s.indices))
        return [tuple(int(i) for i in s.zero_based) for s in ordered]

    def run(self, config: SearchConfig, method: str = "") -> FitResult:
        gamma = float(config.gamma)
        variant = config.variant
        candidates = self._candidates(config)

        values: list[float] = []
        coefficients: list[np.ndarray] = []
        for k, chunk in _batches(candidates, settings.SUPPORT_BATCH_SIZE):
            if k == 0:
                values.append(exact_sum(s.weight * s.c0 for s in self.summaries))
                coefficients.append(np.zeros(0))
                continue
            index = np.array(chunk, dtype=int)
            H, g, c = _restricted_terms(self.summaries, index, gamma, variant)
            H = 0.5 * (H + np.swapaxes(H, 1, 2))
            beta = _batched_solve(H, g, index, c, config.ridge_jitter)
            loss, penalty = _restricted_values(self.summaries, index, beta, variant)
            values.extend((loss + gamma * penalty).tolist())
            coefficients.extend(beta)

        values_arr = np.array(values)
        best_value = float(np.min(values_arr))
        # Candidates are in (cardinality, lexicographic) order: first hit wins ties
        winner = int(np.flatnonzero(values_arr <= best_value + settings.TIE_TOLERANCE)[0])
        positions = candidates[winner]
        support = Support.from_zero_based(positions)
        beta_full = np.zeros(self.data.p)
        beta_full[list(positions)] = coefficients[winner]

        value = objective(
            self.data,
            beta_full,
            support,
            gamma,
            mode=self.mode,
            imputations=self.imputations,
            variant=variant,
        )
        logger.debug(
            f"Search ({self.mode.value}, {variant.value}, gamma={gamma}) over "
            f"{len(candidates)} supports selected {support} with objective {value.total:.6g}"
        )
        return FitResult(
            support=support,
            beta=beta_full,
            objective=value.total,
            loss_part=value.loss,
            penalty_part=value.penalty,
            gamma=gamma,
            method=method or self.mode.value,
            penalty_variant=variant.value,
        )

    def gamma_path(
        self, config: SearchConfig, gammas: Sequence[float], method: str = ""
    ) -> list[FitResult]:
        """Fits over a gamma grid; penalty increases along the grid are logged."""
        fits = []
        for gamma in sorted(gammas):
            fit = self.run(
                SearchConfig(
                    gamma=gamma,
                    variant=config.variant,
                    max_support_dim=config.max_support_dim,
                    ridge_jitter=config.ridge_jitter,
                    candidate_supports=config.candidate_supports,
                ),
                method=method,
            )
            if fits and fit.penalty_part > fits[-1].penalty_part + settings.TIE_TOLERANCE:
                logger.warning(
                    f"Penalty increased from {fits[-1].penalty_part:.6g} "
                    f"(gamma={fits[-1].gamma}) to {fit.penalty_part:.6g} (gamma={gamma})"
                )
            fits.append(fit)
        return fits


def search(
    data: MultiEnvDataset,
    config: SearchConfig,
    mode: ObjectiveMode = ObjectiveMode.COMPLETE,
    imputations: Optional[Imputations] = None,
    method: str = "",
) -> FitResult:
    """Global minimizer of the objective over all candidate supports."""
    return SupportSearch(data, mode, imputations).run(config, method=method)
