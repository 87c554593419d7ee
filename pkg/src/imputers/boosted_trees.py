"""Gradient-boosted regression-tree imputer (squared loss, shrinkage)."""

import logging
from typing import Any

import numpy as np
from sklearn.tree import DecisionTreeRegressor

import settings

from ..errors import ValidationError
from ..imputation import ImputationModel

logger = logging.getLogger(__name__)


@ImputationModel.register("boosted_trees")
class BoostedTreesImputer(ImputationModel):
    """
    Additive trees fitted to residuals, each scaled by ``learning_rate``.

    Prediction is the initial training mean plus the shrunken sum of all
    trees; with ``learning_rate = 0`` it stays the initial mean.
    """

    display_name = "Boosted Trees"

    def __init__(
        self,
        n_rounds: int = settings.BOOSTED_TREES_DEFAULTS["n_rounds"],
        max_depth: int = settings.BOOSTED_TREES_DEFAULTS["max_depth"],
        min_leaf: int = settings.BOOSTED_TREES_DEFAULTS["min_leaf"],
        learning_rate: float = settings.BOOSTED_TREES_DEFAULTS["learning_rate"],
        subsample: float = 1.0,
        seed: int = 0,
    ):
        super().__init__(seed)
        if n_rounds < 0:
            raise ValidationError(f"n_rounds must be >= 0, got {n_rounds}")
        if max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {max_depth}")
        if min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {min_leaf}")
        if learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {learning_rate}")
        if not 0 < subsample <= 1:
            raise ValidationError(f"subsample must be in (0, 1], got {subsample}")
        self.n_rounds = int(n_rounds)
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.learning_rate = float(learning_rate)
        self.subsample = float(subsample)
        self.initial = 0.0
        self.trees: list[DecisionTreeRegressor] = []

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "BoostedTreesImputer":
        defaults = settings.BOOSTED_TREES_DEFAULTS
        return cls(
            n_rounds=config.get("n_rounds", defaults["n_rounds"]),
            max_depth=config.get("max_depth", defaults["max_depth"]),
            min_leaf=config.get("min_leaf", defaults["min_leaf"]),
            learning_rate=config.get("learning_rate", defaults["learning_rate"]),
            subsample=config.get("subsample", 1.0),
            seed=config.get("seed", 0),
        )

    def get_config(self) -> dict[str, Any]:
        return {
            "family": "boosted_trees",
            "n_rounds": self.n_rounds,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "learning_rate": self.learning_rate,
            "subsample": self.subsample,
            "seed": self.seed,
        }

    def _fit(self, x: np.ndarray, y: np.ndarray) -> None:
        self.initial = float(np.mean(y))
        self.trees = []
        if self.learning_rate == 0.0 or self.max_depth == 0:
            return

        rows = x.shape[0]
        sample_size = max(1, int(round(self.subsample * rows)))
        current = np.full(rows, self.initial)
        for stream in np.random.SeedSequence(self.seed).spawn(self.n_rounds):
            rng = np.random.default_rng(stream)
            residual = y - current
            if sample_size < rows:
                sample = np.sort(rng.choice(rows, size=sample_size, replace=False))
            else:
                sample = np.arange(rows)
            tree = DecisionTreeRegressor(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_leaf,
                random_state=int(rng.integers(2**31 - 1)),
            )
            tree.fit(x[sample], residual[sample])
            current = current + self.learning_rate * tree.predict(x)
            self.trees.append(tree)
        logger.debug(
            f"Boosted {len(self.trees)} trees; training MSE {np.mean((y - current) ** 2):.6g}"
        )

    def _predict(self, x: np.ndarray) -> np.ndarray:
        prediction = np.full(x.shape[0], self.initial)
        for tree in self.trees:
            prediction = prediction + self.learning_rate * tree.predict(x)
        return prediction
