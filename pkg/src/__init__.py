"""Imputation-adjusted invariance estimation across environments."""

from .imputation import ImputationModel
from .imputers import load_imputers
from .dataset import EnvironmentData, FitResult, MultiEnvDataset, Support
from .estimators import Method, MethodFitter, fit
from .simulation import SimulationSpec, run_studies, run_study

# Pre-load imputers so they are registered when src is imported
load_imputers()

__all__ = [
    "ImputationModel",
    "load_imputers",
    "EnvironmentData",
    "FitResult",
    "MultiEnvDataset",
    "Support",
    "Method",
    "MethodFitter",
    "fit",
    "SimulationSpec",
    "run_studies",
    "run_study",
]
