"""
Structural equation models used by the simulation studies.

Every model has two environments and twelve covariates; y always depends on
x1, x2, x3 through beta* = (3, 2, -0.5, 0, ...). The models differ in how the
descendants of y (x6..x9, x11) and, for Models 2 and 3 in environment 2, the
outcome itself are generated.
"""

import logging
from enum import Enum
from typing import Optional

import numpy as np

import settings
from src.dataset import EnvironmentData, GroundTruth, MultiEnvDataset
from src.errors import AllMissing, DimensionMismatch, ValidationError
from src.utils import derive_rng

logger = logging.getLogger(__name__)

ENVIRONMENTS = (1, 2)
# u1..u13 then v14; the last column is only read by Model 3, environment 2
NOISE_COLUMNS = 14


class SemModel(str, Enum):
    MODEL0 = "model0"
    MODEL1 = "model1"
    MODEL2 = "model2"
    MODEL3 = "model3"

    @property
    def number(self) -> int:
        return int(self.value[-1])


def ground_truth() -> GroundTruth:
    return GroundTruth.from_beta(settings.BETA_STAR)


def draw_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal noise, one row per sample: u1..u13 and v14."""
    return rng.standard_normal((n, NOISE_COLUMNS))


def _outcome(model: SemModel, env: int, x: dict, u, v14) -> np.ndarray:
    y = 3.0 * x[1] + 2.0 * x[2] - 0.5 * x[3] + u(13)
    if env == 2 and model is SemModel.MODEL2:
        y = y + np.sin(x[12]) + (x[12] ** 2 - 1.0)
    elif env == 2 and model is SemModel.MODEL3:
        v13 = -0.5 * x[12] ** 3 + v14
        y = y + 0.5 * x[12] + v13
    return y


def _children_of_y(model: SemModel, env: int, x: dict, y: np.ndarray, u) -> None:
    """x7 and x8, the blocks where the models differ."""
    if model is SemModel.MODEL0:
        if env == 1:
            x[7] = 0.5 * x[3] + y + u(7)
        else:
            x[7] = 4.0 * x[3] + np.tanh(y) + u(7)
        x[8] = 0.5 * x[7] - y + x[10] + u(8)
    elif env == 1:
        x[7] = 0.5 * np.sin(x[3] ** 2) + 8.0 * y**3 + u(7)
        x[8] = np.log(np.abs(x[7] * y + 1.0)) + 5.0 * np.sin(y) + u(8)
    else:
        x[7] = np.tanh(x[3]) + 4.0 * np.sqrt(np.abs(y)) + u(7)
        x[8] = 0.5 * x[7] ** 2 + y**3 + np.cos(y) + u(8)


def generate(
    model,
    env: int,
    n: int,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    env_id: Optional[str] = None,
) -> EnvironmentData:
    """
    Draw ``n`` fully labeled rows from environment ``env`` of ``model``.

    ``noise`` replaces the random draw (shape (n, 13) or (n, 14)); it exists
    so tests can propagate hand-chosen noise through the equations.
    """
    model = SemModel(model)
    if env not in ENVIRONMENTS:
        raise ValidationError(f"Environment must be one of {ENVIRONMENTS}, got {env}")
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if noise is None:
        if rng is None:
            raise ValidationError("generate needs either rng or noise")
        noise = draw_noise(n, rng)
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 2 or noise.shape[0] != n or noise.shape[1] not in (13, NOISE_COLUMNS):
        raise DimensionMismatch(
            f"noise must have shape ({n}, 13) or ({n}, {NOISE_COLUMNS}), got {noise.shape}"
        )

    def u(j: int) -> np.ndarray:
        return noise[:, j - 1]

    v14 = noise[:, 13] if noise.shape[1] == NOISE_COLUMNS else np.zeros(n)

    x: dict[int, np.ndarray] = {}
    x[1] = u(1)
    x[4] = u(4) if env == 1 else u(4) ** 2 - 1.0
    x[2] = np.sin(x[4]) + u(2)
    x[3] = np.cos(x[4]) + u(3)
    x[5] = np.sin(x[3] + u(5))
    x[10] = 2.5 * x[1] + 1.5 * x[2] + u(10)
    x[12] = u(12)
    y = _outcome(model, env, x, u, v14)
    x[6] = 0.8 * y * u(6)
    _children_of_y(model, env, x, y, u)
    x[9] = np.tanh(x[7]) + 0.1 * np.cos(x[8]) + u(9)
    x[11] = 0.4 * (x[7] + x[8]) * u(11)

    covariates = np.column_stack([x[j] for j in range(1, settings.N_COVARIATES + 1)])
    return EnvironmentData.from_outcomes(
        env_id=env_id or str(env), covariates=covariates, outcomes=y
    )


def generate_dataset(model, n: int, master_seed: int, *key: int) -> MultiEnvDataset:
    """Both environments, each from its own stream derived from (master_seed, *key, env)."""
    environments = [
        generate(model, env, n, rng=derive_rng(master_seed, *key, env))
        for env in ENVIRONMENTS
    ]
    return MultiEnvDataset.from_environments(environments)


def masked_count(N: int, ratio: float) -> int:
    """round(N * ratio) with halves rounded up."""
    return int(np.floor(N * ratio + 0.5))


def apply_mcar(env: EnvironmentData, ratio: float, rng: np.random.Generator) -> EnvironmentData:
    """
    Hide exactly round(N * ratio) outcomes, chosen uniformly without replacement.

    Covariates are untouched and the choice of rows ignores (x, y).
    """
    if not 0.0 <= ratio < 1.0:
        raise ValidationError(f"missing ratio must be in [0, 1), got {ratio}")
    count = masked_count(env.N, ratio)
    if count >= env.N:
        raise AllMissing(
            f"Environment '{env.env_id}': ratio {ratio} masks all {env.N} rows"
        )
    if count == 0:
        return env
    hidden = rng.choice(env.N, size=count, replace=False)
    mask = env.label_mask.copy()
    mask[hidden] = False
    if not mask.any():
        raise AllMissing(f"Environment '{env.env_id}': no labeled rows left")
    surviving = mask[env.label_mask]
    return EnvironmentData(
        env_id=env.env_id,
        covariates=env.covariates,
        labels=env.labels[surviving],
        label_mask=mask,
        weight=env.weight,
    )
