"""Study configuration files: INI-style ``key = value`` lines under sections."""

import configparser
import logging
from pathlib import Path
from typing import Any, Optional, Union

import settings
from src.errors import ParseError, ReportIOError, SchemaError
from src.crossval import CvConfig
from src.estimators import Method
from src.imputation import ImputerSpec
from src.objectives import PenaltyVariant
from src.optimizer import SearchConfig
from src.sem import SemModel
from src.simulation import SimulationSpec, study_grid

logger = logging.getLogger(__name__)

SECTIONS = ("simulation", "imputer", "search", "cv")

# Imputer keys that are passed through as family hyper-parameters
HYPERPARAM_KEYS = {
    "n_trees": int,
    "n_rounds": int,
    "max_depth": int,
    "min_leaf": int,
    "learning_rate": float,
    "bootstrap": bool,
    "subsample": float,
    "max_features": float,
}


class ConfigManager:
    """
    Loads a study configuration file and builds the typed specs from it.

    Example::

        [simulation]
        models = model1
        n_per_env = 1000
        missing_ratios = 0.7
        gammas = 1, 5, 10, 20
        replications = 100

        [imputer]
        family = boosted_trees
        strategy = bias
    """

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.config_file = Path(config_file) if config_file else None
        self.parser = self._load_config()

    def _load_config(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if self.config_file is None:
            return parser
        try:
            with self.config_file.open("r", encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as e:
            logger.error(f"Failed to read config file {self.config_file}: {e}")
            raise ReportIOError(f"Failed to read config file {self.config_file}: {e}") from e
        except configparser.Error as e:
            logger.error(f"Config file {self.config_file} is malformed: {e}")
            raise ParseError(f"Config file {self.config_file} is malformed: {e}") from e
        unknown = [s for s in parser.sections() if s not in SECTIONS]
        if unknown:
            raise SchemaError(f"Unknown config section(s) {unknown}; expected {list(SECTIONS)}")
        logger.info(f"Loaded config {self.config_file}: sections {parser.sections()}")
        return parser

    def section(self, name: str) -> dict[str, str]:
        """Raw key/value pairs of a section (empty if absent)."""
        if not self.parser.has_section(name):
            return {}
        return dict(self.parser.items(name))

    def _value(self, section: str, key: str, convert, default=None):
        raw = self.section(section).get(key)
        if raw is None or raw.strip() == "":
            return default
        try:
            if convert is bool:
                return self.parser.getboolean(section, key)
            return convert(raw.strip())
        except ValueError as e:
            raise ParseError(
                f"Invalid value '{raw}' for [{section}] {key}: {e}", column=key
            ) from e

    def _list(self, section: str, key: str, convert, default=()) -> tuple:
        raw = self.section(section).get(key)
        if raw is None or raw.strip() == "":
            return tuple(default)
        try:
            return tuple(convert(item.strip()) for item in raw.split(",") if item.strip())
        except ValueError as e:
            raise ParseError(
                f"Invalid list '{raw}' for [{section}] {key}: {e}", column=key
            ) from e

    def _check_keys(self, section: str, allowed: set[str]) -> None:
        unknown = sorted(set(self.section(section)) - allowed)
        if unknown:
            raise SchemaError(f"Unknown key(s) {unknown} in [{section}]", column=unknown[0])

    def imputer_spec(self, **overrides: Any) -> ImputerSpec:
        allowed = {
            "family", "strategy", "shift_delta", "noise_sd", "seed", "training"
        } | set(HYPERPARAM_KEYS)
        self._check_keys("imputer", allowed)
        hyperparams = {}
        for key, convert in HYPERPARAM_KEYS.items():
            value = self._value("imputer", key, convert)
            if value is not None:
                hyperparams[key] = value
        shift = self._list("imputer", "shift_delta", float)
        values = {
            "family": self._value("imputer", "family", str, settings.DEFAULT_IMPUTER_FAMILY),
            "strategy": self._value("imputer", "strategy", str, settings.DEFAULT_STRATEGY),
            "hyperparams": hyperparams,
            "shift_delta": None if not shift else (shift[0] if len(shift) == 1 else shift),
            "noise_sd": self._value("imputer", "noise_sd", float),
            "seed": self._value("imputer", "seed", int, settings.DEFAULT_IMPUTER_SEED),
            "training": self._value(
                "imputer", "training", str, settings.DEFAULT_IMPUTER_TRAINING
            ),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ImputerSpec(**values)

    def search_config(self, **overrides: Any) -> SearchConfig:
        self._check_keys("search", {"gamma", "variant", "max_support_dim", "ridge_jitter"})
        values = {
            "gamma": self._value("search", "gamma", float, settings.DEFAULT_GAMMA),
            "variant": self._value("search", "variant", PenaltyVariant, PenaltyVariant.BASIC),
            "max_support_dim": self._value(
                "search", "max_support_dim", int, settings.DEFAULT_MAX_SUPPORT_DIM
            ),
            "ridge_jitter": self._value(
                "search", "ridge_jitter", float, settings.DEFAULT_RIDGE_JITTER
            ),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SearchConfig(**values)

    def simulation_specs(self, master_seed: Optional[int] = None) -> list[SimulationSpec]:
        """Every scenario of the [simulation] grid; ``master_seed`` overrides the file."""
        self._check_keys(
            "simulation",
            {
                "models", "model", "sample_sizes", "n_per_env", "missing_ratios",
                "missing_ratio", "gammas", "methods", "variants", "replications",
                "master_seed", "first_replication",
            },
        )
        search = self.search_config()
        models = self._list("simulation", "models", SemModel) or self._list(
            "simulation", "model", SemModel, (SemModel.MODEL0,)
        )
        sizes = self._list("simulation", "sample_sizes", int) or self._list(
            "simulation", "n_per_env", int, settings.DEFAULT_SAMPLE_SIZES
        )
        ratios = self._list("simulation", "missing_ratios", float) or self._list(
            "simulation", "missing_ratio", float, settings.DEFAULT_MISSING_RATIOS
        )
        seed = master_seed
        if seed is None:
            seed = self._value("simulation", "master_seed", int, settings.DEFAULT_MASTER_SEED)
        base = SimulationSpec(
            model=models[0],
            n_per_env=sizes[0],
            missing_ratio=ratios[0],
            imputer=self.imputer_spec(),
            gammas=self._list("simulation", "gammas", float, settings.DEFAULT_GAMMAS),
            methods=self._list("simulation", "methods", Method, tuple(Method)),
            variants=self._list("simulation", "variants", PenaltyVariant, tuple(PenaltyVariant)),
            replications=self._value(
                "simulation", "replications", int, settings.DEFAULT_REPLICATIONS
            ),
            master_seed=seed,
            first_replication=self._value("simulation", "first_replication", int, 0),
            max_support_dim=search.max_support_dim,
            ridge_jitter=search.ridge_jitter,
        )
        specs = study_grid(base, models, sizes, ratios)
        logger.info(f"Configured {len(specs)} simulation scenario(s) with master seed {seed}")
        return specs

    def cv_config(self, **overrides: Any) -> CvConfig:
        self._check_keys(
            "cv",
            {"gammas", "methods", "variants", "mask_rate", "env_column", "date_column", "seed"},
        )
        values = {
            "gammas": self._list("cv", "gammas", float, settings.DEFAULT_GAMMAS),
            "methods": self._list("cv", "methods", Method, tuple(Method)),
            "variants": self._list("cv", "variants", PenaltyVariant, (PenaltyVariant.BASIC,)),
            "mask_rate": self._value("cv", "mask_rate", float, settings.CV_MASK_RATE),
            "env_column": self._value("cv", "env_column", str, settings.CV_ENV_COLUMN),
            "date_column": self._value("cv", "date_column", str, settings.CV_DATE_COLUMN),
            "seed": self._value("cv", "seed", int, settings.DEFAULT_MASTER_SEED),
            "imputer": self.imputer_spec(),
            "max_support_dim": self.search_config().max_support_dim,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return CvConfig(**values)
