"""
Estimation methods: a dataset view per method plus the matching objective mode.

iaei           original data + predictions, adjusted objective
oracle         fully labeled data, complete objective
eills_observe  labeled rows only
eills_impute   every row labeled with its prediction
eills_mix      observed label where available, prediction elsewhere
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from src.dataset import FitResult, MultiEnvDataset, validate_dataset
from src.errors import MissingImputation, OracleNeedsLabels
from src.objectives import Imputations, ObjectiveMode, PenaltyVariant, predictions_for
from src.optimizer import SearchConfig, SupportSearch

logger = logging.getLogger(__name__)


class Method(str, Enum):
    IAEI = "iaei"
    ORACLE = "oracle"
    EILLS_OBSERVE = "eills_observe"
    EILLS_IMPUTE = "eills_impute"
    EILLS_MIX = "eills_mix"

    @property
    def needs_imputations(self) -> bool:
        return self in (Method.IAEI, Method.EILLS_IMPUTE, Method.EILLS_MIX)


@dataclass(frozen=True, eq=False)
class MethodView:
    """Dataset a method optimizes over, with the objective mode to use."""

    method: Method
    data: MultiEnvDataset
    mode: ObjectiveMode
    imputations: Optional[Imputations] = None


_VIEWS: dict[Method, Callable[[MultiEnvDataset, Optional[Imputations]], MethodView]] = {}


def _register_view(method: Method):
    """Decorator to register the view builder of a method."""

    def wrapper(builder):
        _VIEWS[method] = builder
        return builder

    return wrapper


@_register_view(Method.IAEI)
def _iaei_view(data, imputations):
    for env in data.environments:
        predictions_for(env, imputations)
    return MethodView(Method.IAEI, data, ObjectiveMode.ADJUSTED, imputations)


@_register_view(Method.ORACLE)
def _oracle_view(data, imputations):
    partial = [env.env_id for env in data.environments if not env.fully_labeled]
    if partial:
        raise OracleNeedsLabels(
            f"The oracle method needs every label; environments {partial} have missing outcomes"
        )
    return MethodView(Method.ORACLE, data, ObjectiveMode.COMPLETE)


@_register_view(Method.EILLS_OBSERVE)
def _observe_view(data, imputations):
    view = data.replace_environments(
        [env.subset(env.label_mask) for env in data.environments]
    )
    return MethodView(Method.EILLS_OBSERVE, validate_dataset(view), ObjectiveMode.COMPLETE)


@_register_view(Method.EILLS_IMPUTE)
def _impute_view(data, imputations):
    environments = []
    for env in data.environments:
        predictions = predictions_for(env, imputations)
        environments.append(env.with_labels(predictions))
    view = data.replace_environments(environments)
    return MethodView(Method.EILLS_IMPUTE, validate_dataset(view), ObjectiveMode.COMPLETE)


@_register_view(Method.EILLS_MIX)
def _mix_view(data, imputations):
    environments = []
    for env in data.environments:
        outcomes = np.array(predictions_for(env, imputations), dtype=float)
        outcomes[env.label_mask] = env.labels
        environments.append(env.with_labels(outcomes))
    view = data.replace_environments(environments)
    return MethodView(Method.EILLS_MIX, validate_dataset(view), ObjectiveMode.COMPLETE)


def prepare_view(
    method, data: MultiEnvDataset, imputations: Optional[Imputations] = None
) -> MethodView:
    """Dataset transformation of ``method``; weights of every environment are kept."""
    method = Method(method)
    data = validate_dataset(data)
    if method.needs_imputations and imputations is None:
        raise MissingImputation(f"Method '{method.value}' requires imputations")
    return _VIEWS[method](data, imputations)


class MethodFitter:
    """
    Fits one method on one dataset for any number of (gamma, variant) settings.

    The view and its moment summaries are built once.
    """

    def __init__(
        self, method, data: MultiEnvDataset, imputations: Optional[Imputations] = None
    ):
        self.method = Method(method)
        data = validate_dataset(data, min_environments=2)
        self.view = prepare_view(self.method, data, imputations)
        self._search = SupportSearch(self.view.data, self.view.mode, self.view.imputations)

    def fit(self, config: SearchConfig) -> FitResult:
        result = self._search.run(config, method=self.method.value)
        logger.debug(
            f"{self.method.value} ({result.penalty_variant}, gamma={result.gamma}) "
            f"selected {result.support}"
        )
        return result

    def fit_grid(
        self,
        gammas: Sequence[float],
        variants: Sequence[PenaltyVariant],
        base: Optional[SearchConfig] = None,
    ) -> list[FitResult]:
        """Fits in (variant, gamma) order as given; each variant is solved as one gamma path."""
        base = base or SearchConfig()
        results = []
        for variant in variants:
            path = self._search.gamma_path(
                replace(base, variant=PenaltyVariant(variant)), gammas, method=self.method.value
            )
            by_gamma = {fit.gamma: fit for fit in path}
            results.extend(by_gamma[gamma] for gamma in gammas)
        return results


def fit(
    method,
    data: MultiEnvDataset,
    imputations: Optional[Imputations] = None,
    config: Optional[SearchConfig] = None,
) -> FitResult:
    """
    Fit ``method`` at a single gamma.

    iaei minimizes the adjusted objective on the original data; every other
    method minimizes the complete objective on its prepared view.
    """
    return MethodFitter(method, data, imputations).fit(config or SearchConfig())
