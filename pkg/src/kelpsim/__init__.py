"""Simulation engine for a coupled kelp / harvester-compliance / price
jump-diffusion system: positivity-preserving time stepping, an exact
agent-based chain with its mean-field limit, ensemble analysis, and
convergence harnesses."""

from .model import (
    ComplianceParams,
    EcologicalParams,
    JumpParams,
    MarkDistribution,
    ModelParams,
    PriceParams,
    RateFamily,
    StateVec,
    validate_params,
)
from .noise import SeedSpec
from .scheme import GridSpec, PathRecord, build_grid, simulate_path
from .analysis import Ensemble, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "ComplianceParams",
    "EcologicalParams",
    "JumpParams",
    "MarkDistribution",
    "ModelParams",
    "PriceParams",
    "RateFamily",
    "StateVec",
    "validate_params",
    "SeedSpec",
    "GridSpec",
    "PathRecord",
    "build_grid",
    "simulate_path",
    "Ensemble",
    "run_ensemble",
    "__version__",
]
