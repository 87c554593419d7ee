"""Ordinary least squares imputer with intercept."""

import logging
import warnings
from typing import Any

import numpy as np
from sklearn.linear_model import LinearRegression

from ..errors import DegenerateDesignWarning
from ..imputation import ImputationModel

logger = logging.getLogger(__name__)


@ImputationModel.register("ols")
class OLSImputer(ImputationModel):
    """
    Linear regression imputer.

    Unlike the invariant objective, the imputer fits an intercept. A
    rank-deficient design falls back to the minimum-norm least-squares
    solution and is flagged with ``DegenerateDesignWarning``.
    """

    display_name = "Linear Regression (OLS)"

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.degenerate = False
        self._model = LinearRegression(fit_intercept=True)

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "OLSImputer":
        return cls(seed=config.get("seed", 0))

    def get_config(self) -> dict[str, Any]:
        return {"family": "ols", "seed": self.seed}

    @property
    def coef_(self) -> np.ndarray:
        return self._model.coef_

    @property
    def intercept_(self) -> float:
        return float(self._model.intercept_)

    def _fit(self, x: np.ndarray, y: np.ndarray) -> None:
        self._model.fit(x, y)
        # Centering by the intercept costs one degree of freedom
        full_rank = min(x.shape[1], x.shape[0] - 1)
        self.degenerate = int(self._model.rank_) < full_rank
        if self.degenerate:
            message = (
                f"OLS design has rank {self._model.rank_} < {full_rank}; "
                f"using the minimum-norm solution"
            )
            logger.warning(message)
            warnings.warn(message, DegenerateDesignWarning, stacklevel=3)

    def _predict(self, x: np.ndarray) -> np.ndarray:
        return self._model.predict(x)
