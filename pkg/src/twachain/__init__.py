"""Simulation and analysis toolkit for boundary-driven dissipative Bose-Hubbard chains."""

__version__ = "0.1.0"

from .model import (
    ChainParams,
    InitialCondition,
    IntegrationControls,
    ValidatedConfig,
    validate,
    load_config,
    save_config,
)
from .engine import FieldEnsemble

__all__ = [
    "ChainParams",
    "InitialCondition",
    "IntegrationControls",
    "ValidatedConfig",
    "validate",
    "load_config",
    "save_config",
    "FieldEnsemble",
    "__version__",
]
