"""Random forest imputer."""

import logging
from typing import Any, Optional

import numpy as np
from sklearn.ensemble import RandomForestRegressor

import settings

from ..errors import ValidationError
from ..imputation import ImputationModel

logger = logging.getLogger(__name__)


@ImputationModel.register("random_forest")
class RandomForestImputer(ImputationModel):
    """
    Random forest: regression trees grown on bootstrap resamples, averaged.

    All resampling and split randomness comes from ``seed``.
    """

    display_name = "Random Forest"

    def __init__(
        self,
        n_trees: int = settings.RANDOM_FOREST_DEFAULTS["n_trees"],
        max_depth: Optional[int] = settings.RANDOM_FOREST_DEFAULTS["max_depth"],
        min_leaf: int = settings.RANDOM_FOREST_DEFAULTS["min_leaf"],
        bootstrap: bool = settings.RANDOM_FOREST_DEFAULTS["bootstrap"],
        max_features: Optional[float] = None,
        seed: int = 0,
    ):
        """
        Args:
            n_trees: Number of trees (>= 1)
            max_depth: Maximum tree depth; 0 gives the constant training-mean
                predictor, None grows trees until leaves are pure
            min_leaf: Minimum number of rows per leaf
            bootstrap: Resample rows with replacement for each tree
            max_features: Fraction of covariates considered per split, None for all
            seed: random_state of the forest
        """
        super().__init__(seed)
        if n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {n_trees}")
        if max_depth is not None and max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {max_depth}")
        if min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {min_leaf}")
        self.n_trees = int(n_trees)
        self.max_depth = None if max_depth is None else int(max_depth)
        self.min_leaf = int(min_leaf)
        self.bootstrap = bool(bootstrap)
        self.max_features = max_features
        self.forest: Optional[RandomForestRegressor] = None
        self.constant: Optional[float] = None

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "RandomForestImputer":
        defaults = settings.RANDOM_FOREST_DEFAULTS
        return cls(
            n_trees=config.get("n_trees", defaults["n_trees"]),
            max_depth=config.get("max_depth", defaults["max_depth"]),
            min_leaf=config.get("min_leaf", defaults["min_leaf"]),
            bootstrap=config.get("bootstrap", defaults["bootstrap"]),
            max_features=config.get("max_features"),
            seed=config.get("seed", 0),
        )

    def get_config(self) -> dict[str, Any]:
        return {
            "family": "random_forest",
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "bootstrap": self.bootstrap,
            "max_features": self.max_features,
            "seed": self.seed,
        }

    def _fit(self, x: np.ndarray, y: np.ndarray) -> None:
        self.forest = None
        self.constant = None
        if self.max_depth == 0:
            self.constant = float(np.mean(y))
            logger.debug(f"Depth-0 forest: constant predictor {self.constant:.6g}")
            return

        self.forest = RandomForestRegressor(
            n_estimators=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_leaf,
            bootstrap=self.bootstrap,
            max_features=1.0 if self.max_features is None else self.max_features,
            random_state=self.seed,
        )
        self.forest.fit(x, y)

    def _predict(self, x: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            return np.full(x.shape[0], self.constant)
        return self.forest.predict(x)
