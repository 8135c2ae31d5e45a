"""Cell-free massive MIMO URLLC downlink: rate bounds and power allocation.

Modules
-------
sysmodel   configuration, deployment, path loss and AP selection
channel    Rayleigh channels and MMSE estimates
fbl        finite-blocklength rate kernel
sinr       closed-form SINR bounds and the Monte Carlo oracle
gp         geometric programming solver
optimizer  SCA power allocation and round-robin scheduling
harness    experiment sweeps and CSV/JSON output
"""

from .exceptions import CfUrllcError, ConfigError, DomainError, InfeasibleError, SolverError
from .fbl import FblParams, lb_rate, q_inv, rate_fbl
from .gp import GpProblem, GpSolution, Monomial, Posynomial, Status, solve, variable
from .harness import ExperimentSpec, Kind, RunRecord, emit, run
from .optimizer import (
    AllocationResult, AllocationStatus, Scenario, algorithm1, baseline_equal_power,
    schedule_round_robin,
)
from .sinr import mc_ergodic_rate, sinr_breakdown, sinr_lb
from .sysmodel import Scheme, SystemConfig, deploy, load_config, select_aps

__version__ = "0.1.0"

__all__ = [
    "AllocationResult", "AllocationStatus", "CfUrllcError", "ConfigError", "DomainError",
    "ExperimentSpec", "FblParams", "GpProblem", "GpSolution", "InfeasibleError", "Kind",
    "Monomial", "Posynomial", "RunRecord", "Scenario", "Scheme", "SolverError", "Status",
    "SystemConfig", "algorithm1", "baseline_equal_power", "deploy", "emit", "lb_rate",
    "load_config", "mc_ergodic_rate", "q_inv", "rate_fbl", "run", "schedule_round_robin",
    "select_aps", "sinr_breakdown", "sinr_lb", "solve", "variable",
]
