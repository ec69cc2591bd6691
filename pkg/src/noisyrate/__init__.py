"""Noisy firing-rate networks and their Gaussian mean-field limit."""

__version__ = "0.1.0"

import os as _os

# numba otherwise probes an old system TBB and warns
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import (  # noqa: E402
    DomainError,
    IntegrationDivergedError,
    IntegrationError,
    MemoryBudgetError,
    SpecError,
)
from .model import (  # noqa: E402
    ModelSpec,
    MomentState,
    PopulationParams,
    Schedule,
    closure_f,
    closure_f_dmu,
    covariance,
    ei_network,
    hopf_network,
    pitchfork_network,
    sigmoid,
    stationary_variance,
    variance_trajectory,
)

__all__ = [
    "DomainError",
    "IntegrationDivergedError",
    "IntegrationError",
    "MemoryBudgetError",
    "SpecError",
    "ModelSpec",
    "MomentState",
    "PopulationParams",
    "Schedule",
    "closure_f",
    "closure_f_dmu",
    "covariance",
    "ei_network",
    "hopf_network",
    "pitchfork_network",
    "sigmoid",
    "stationary_variance",
    "variance_trajectory",
]
