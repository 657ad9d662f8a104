"""Relaxation-optimized coherence transfer in a scalar-coupled two-spin system."""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    critical_time,
    eta_inept,
    eta_max,
    eta_optimal,
    tau_of_time,
)
from .reduced import ControlSchedule, propagate  # noqa: E402
from .synthesis import synthesize  # noqa: E402

__all__ = [
    "__version__",
    "critical_time",
    "eta_inept",
    "eta_max",
    "eta_optimal",
    "tau_of_time",
    "ControlSchedule",
    "propagate",
    "synthesize",
]
