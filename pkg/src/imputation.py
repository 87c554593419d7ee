"""Base class for imputation models, imputation strategies and diagnostics."""

import logging
import pickle
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Union

import numpy as np

import settings
from src.dataset import EnvironmentData, MultiEnvDataset
from src.errors import (
    MissingModel,
    NonFinite,
    ParseError,
    ReportIOError,
    TooFewRows,
    ValidationError,
)
from src.utils import column_means, derive_rng

logger = logging.getLogger(__name__)


class Predictor(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...


class ImputationModel(ABC):
    """Base class for outcome imputers with a family registry."""

    _registry: dict[str, type["ImputationModel"]] = {}

    family: str = "base"
    display_name: str = "Base Imputer"

    @classmethod
    def register(cls, family: str):
        """Decorator to register an imputer family."""

        def wrapper(subclass):
            cls._registry[family] = subclass
            subclass.family = family
            return subclass

        return wrapper

    @classmethod
    def get_registered_families(cls) -> dict[str, type["ImputationModel"]]:
        """Get all registered imputer families."""
        return cls._registry

    @classmethod
    def get_model_class(cls, family: str) -> type["ImputationModel"]:
        """Get a registered imputer class by family name."""
        if family not in cls._registry:
            raise ValidationError(f"Imputer family '{family}' not found in registry.")
        return cls._registry[family]

    @classmethod
    def list_families(cls):
        """Print a list of all registered imputer families."""
        print(f"\nAvailable imputers ({len(cls._registry)} total):")
        print("-" * 60)
        for family, model_class in cls._registry.items():
            print(f"  {family:<15} {model_class.display_name}")
        print("-" * 60)

    def __init__(self, seed: int = settings.DEFAULT_IMPUTER_SEED):
        self.seed = int(seed)
        self.fitted = False

    @classmethod
    @abstractmethod
    def from_config(cls, config: dict[str, Any]) -> "ImputationModel":
        """
        Create an imputer from a configuration dictionary.

        Args:
            config: Hyper-parameters of the family plus ``seed``.
        """
        pass

    @abstractmethod
    def get_config(self) -> dict[str, Any]:
        """Return the fitted hyper-parameters, including the seed."""
        pass

    @abstractmethod
    def _fit(self, x: np.ndarray, y: np.ndarray) -> None:
        pass

    @abstractmethod
    def _predict(self, x: np.ndarray) -> np.ndarray:
        pass

    def fit(self, x, y) -> "ImputationModel":
        """Train on (x, y) rows; deterministic for fixed inputs and seed."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValidationError(
                f"{x.shape[0]} covariate rows for {y.shape[0]} outcomes"
            )
        if x.shape[0] < 2:
            raise TooFewRows(
                f"{self.display_name} needs at least 2 training rows, got {x.shape[0]}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NonFinite(f"{self.display_name} training data has non-finite values")
        self._fit(x, y)
        self.fitted = True
        logger.info(
            f"Trained {self.family} imputer on {x.shape[0]} rows with {self.get_config()}"
        )
        return self

    def predict(self, x) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError(f"{self.display_name} must be trained before predicting")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self._predict(x), dtype=float).reshape(-1)


def train(
    family: str,
    x,
    y,
    hyperparams: Optional[Mapping[str, Any]] = None,
    seed: int = settings.DEFAULT_IMPUTER_SEED,
) -> ImputationModel:
    """Train a registered imputer family on (x, y)."""
    model_class = ImputationModel.get_model_class(family)
    config = dict(hyperparams or {})
    config["seed"] = seed
    return model_class.from_config(config).fit(x, y)


TREE_FAMILIES = ("random_forest", "boosted_trees")


@dataclass(frozen=True)
class ImputerSpec:
    """
    Imputer family, strategy and perturbation settings.

    ``shift_delta`` and ``noise_sd`` default per strategy: none for precise,
    ``settings.BIAS_SHIFT_DELTA`` for bias, ``settings.HBIAS_SHIFT_DELTA`` with
    ``settings.HBIAS_NOISE_SD`` for hbias.
    """

    family: str = settings.DEFAULT_IMPUTER_FAMILY
    strategy: str = settings.DEFAULT_STRATEGY
    hyperparams: dict = field(default_factory=dict)
    shift_delta: Optional[Union[float, tuple[float, ...]]] = None
    noise_sd: Optional[float] = None
    seed: Optional[int] = settings.DEFAULT_IMPUTER_SEED
    training: str = settings.DEFAULT_IMPUTER_TRAINING

    def __post_init__(self):
        # Tree families draw resamples and splits from the seed
        if self.family in TREE_FAMILIES and self.seed is None:
            raise ValidationError(f"Imputer family '{self.family}' needs a seed")
        if self.seed is None:
            object.__setattr__(self, "seed", settings.DEFAULT_IMPUTER_SEED)
        if self.strategy not in settings.IMPUTATION_STRATEGIES:
            raise ValidationError(
                f"Unknown imputation strategy '{self.strategy}'; "
                f"expected one of {settings.IMPUTATION_STRATEGIES}"
            )
        if self.training not in ("fresh", "labeled"):
            raise ValidationError(
                f"Unknown imputer training mode '{self.training}'; expected fresh or labeled"
            )
        if self.noise_sd is not None and self.noise_sd < 0:
            raise ValidationError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if isinstance(self.shift_delta, (list, np.ndarray)):
            object.__setattr__(
                self, "shift_delta", tuple(float(s) for s in self.shift_delta)
            )

    @property
    def resolved_shift(self) -> Union[float, tuple[float, ...]]:
        if self.strategy == "precise":
            return 0.0
        if self.shift_delta is not None:
            return self.shift_delta
        if self.strategy == "bias":
            return settings.BIAS_SHIFT_DELTA
        return settings.HBIAS_SHIFT_DELTA

    @property
    def resolved_noise_sd(self) -> float:
        if self.strategy != "hbias":
            return 0.0
        if self.noise_sd is not None:
            return float(self.noise_sd)
        return settings.HBIAS_NOISE_SD

    def to_dict(self) -> dict:
        shift = self.resolved_shift
        return {
            "family": self.family,
            "strategy": self.strategy,
            "hyperparams": dict(sorted(self.hyperparams.items())),
            "shift_delta": list(shift) if isinstance(shift, tuple) else float(shift),
            "noise_sd": self.resolved_noise_sd,
            "seed": self.seed,
            "training": self.training,
        }


def env_seed(seed: int, env_id: str) -> int:
    """Seed for one environment; independent of every other environment."""
    state = np.random.SeedSequence([int(seed), zlib.crc32(str(env_id).encode())])
    return int(state.generate_state(1)[0])


class PerturbedPredictor:
    """
    Fitted model evaluated at shifted, optionally noised covariates.

    The noise for row i is the i-th row of a standard normal draw seeded by
    ``seed``, so predictions are a deterministic function of (row, seed).
    """

    def __init__(self, model: Predictor, shift=0.0, noise_sd: float = 0.0, seed: int = 0):
        self.model = model
        self.shift = np.asarray(shift, dtype=float)
        self.noise_sd = float(noise_sd)
        self.seed = int(seed)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        shifted = x + self.shift
        if self.noise_sd > 0:
            noise = derive_rng(self.seed).standard_normal(x.shape)
            shifted = shifted + self.noise_sd * noise
        return self.model.predict(shifted)


def build_strategy(
    spec: ImputerSpec, sources: Mapping[str, tuple[np.ndarray, np.ndarray]]
) -> dict[str, Predictor]:
    """
    Train imputers for every environment in ``sources``.

    precise: one model per environment, trained on that environment only.
    bias / hbias: one pooled model, evaluated at shifted (and for hbias noised)
    covariates.
    """
    if not sources:
        raise ValidationError("build_strategy needs at least one training source")

    if spec.strategy == "precise":
        predictors: dict[str, Predictor] = {}
        for env_id, (x, y) in sources.items():
            predictors[env_id] = train(
                spec.family, x, y, spec.hyperparams, seed=env_seed(spec.seed, env_id)
            )
        return predictors

    x_pool = np.vstack([np.atleast_2d(x) for x, _ in sources.values()])
    y_pool = np.concatenate([np.asarray(y).reshape(-1) for _, y in sources.values()])
    pooled = train(spec.family, x_pool, y_pool, spec.hyperparams, seed=spec.seed)
    logger.info(
        f"Pooled {spec.strategy} imputer: shift={spec.resolved_shift}, "
        f"noise_sd={spec.resolved_noise_sd}"
    )
    return {
        env_id: PerturbedPredictor(
            pooled,
            shift=spec.resolved_shift,
            noise_sd=spec.resolved_noise_sd,
            seed=env_seed(spec.seed, env_id),
        )
        for env_id in sources
    }


@dataclass(frozen=True, eq=False)
class ImputedEnvironment:
    """An environment with predictions for every row and its bias diagnostics."""

    env: EnvironmentData
    predictions: np.ndarray
    residuals: np.ndarray
    eta_hat: float
    residual_sd: float


@dataclass(frozen=True, eq=False)
class ImputationDiagnostics:
    """Imputation error z = h(x) - y on labeled rows and its mean eta_hat."""

    eta_hat: dict[str, float]
    residuals: dict[str, np.ndarray]
    residual_sd: dict[str, float]

    def to_dict(self) -> dict:
        return {
            env_id: {"eta_hat": self.eta_hat[env_id], "residual_sd": self.residual_sd[env_id]}
            for env_id in self.eta_hat
        }


def impute_environment(model: Predictor, env: EnvironmentData) -> ImputedEnvironment:
    predictions = np.asarray(model.predict(env.covariates), dtype=float).reshape(-1)
    residuals = predictions[env.label_mask] - env.labels
    eta_hat = float(column_means(residuals))
    residual_sd = float(np.std(residuals, ddof=1)) if residuals.shape[0] > 1 else 0.0
    return ImputedEnvironment(
        env=env,
        predictions=predictions,
        residuals=residuals,
        eta_hat=eta_hat,
        residual_sd=residual_sd,
    )


def impute_dataset(
    models: Mapping[str, Predictor], data: MultiEnvDataset
) -> tuple[dict[str, np.ndarray], ImputationDiagnostics]:
    """Predictions for every row of every environment plus diagnostics."""
    imputed = []
    for env in data.environments:
        if env.env_id not in models:
            raise MissingModel(f"No imputation model for environment '{env.env_id}'")
        imputed.append(impute_environment(models[env.env_id], env))

    for item in imputed:
        logger.debug(
            f"Environment '{item.env.env_id}': eta_hat={item.eta_hat:.4g}, "
            f"residual_sd={item.residual_sd:.4g}"
        )
    predictions = {item.env.env_id: item.predictions for item in imputed}
    diagnostics = ImputationDiagnostics(
        eta_hat={item.env.env_id: item.eta_hat for item in imputed},
        residuals={item.env.env_id: item.residuals for item in imputed},
        residual_sd={item.env.env_id: item.residual_sd for item in imputed},
    )
    return predictions, diagnostics


def save_model(model: ImputationModel, path: Union[str, Path]) -> None:
    """Persist a trained imputer in a versioned pickle envelope."""
    envelope = {
        "format": settings.MODEL_FORMAT,
        "family": model.family,
        "config": model.get_config(),
        "model": model,
    }
    try:
        with Path(path).open("wb") as f:
            pickle.dump(envelope, f, protocol=pickle.HIGHEST_PROTOCOL)
        logger.info(f"Saved {model.family} imputer to {path}")
    except OSError as e:
        logger.error(f"Failed to save imputer to {path}: {e}")
        raise ReportIOError(f"Failed to save imputer to {path}: {e}") from e


def load_model(path: Union[str, Path]) -> ImputationModel:
    """Load an imputer written by ``save_model``."""
    try:
        with Path(path).open("rb") as f:
            envelope = pickle.load(f)
    except OSError as e:
        logger.error(f"Failed to read imputer from {path}: {e}")
        raise ReportIOError(f"Failed to read imputer from {path}: {e}") from e
    except (pickle.UnpicklingError, EOFError) as e:
        raise ParseError(f"Imputer file {path} is corrupted: {e}") from e
    if not isinstance(envelope, dict) or envelope.get("format") != settings.MODEL_FORMAT:
        raise ParseError(
            f"Imputer file {path} is not in format {settings.MODEL_FORMAT}"
        )
    return envelope["model"]
