"""Kinetic and GP-hybrid models of optogenetic ATPase induction in lactate
batches, with parameter estimation and open-loop light-schedule optimization."""

__version__ = "0.1.0"

from .model import NOMINAL_PARAMS, KineticParams, Rates, State, eval_kinetics, rhs_nominal  # noqa: E402
from .sim import BatchMetrics, ControlSchedule, Trajectory, batch_metrics, integrate  # noqa: E402

__all__ = [
    "NOMINAL_PARAMS",
    "KineticParams",
    "Rates",
    "State",
    "eval_kinetics",
    "rhs_nominal",
    "BatchMetrics",
    "ControlSchedule",
    "Trajectory",
    "batch_metrics",
    "integrate",
]
