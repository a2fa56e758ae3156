"""Power-minimising multi-user, multi-band scheduling with superposition coding.

The exact per-band rate solver, the successive-decoding energy model and a
slotted back-pressure simulator, plus numerical oracles that certify the
solver.
"""

__version__ = "0.1.0"

from .energy import EnergyOverflowError, decode_order, energy_for_order, perturb_ties, superposition_energies
from .model import ConfigurationError, SystemConfig, queue_update, validate_config
from .oracle import OracleConvergenceError, OracleSettings, hessian_f, newton_refine, oracle_solve
from .sim import (
    ArrivalModel, MarkovChain, MarkovChannelModel, Scenario, SimulationError, run_simulation, run_sweep,
    schedule_slot, stability_diagnostic,
)
from .solver import (
    BandProblem, SolverConsistencyError, SolverSolution, closed_form_rates, gradient_f, inactivity_test,
    kkt_check, objective_f, solve_band, solve_gains, update_lagrange,
)

__all__ = [
    "ArrivalModel", "BandProblem", "ConfigurationError", "EnergyOverflowError", "MarkovChain",
    "MarkovChannelModel", "OracleConvergenceError", "OracleSettings", "Scenario", "SimulationError",
    "SolverConsistencyError", "SolverSolution", "SystemConfig", "closed_form_rates", "decode_order",
    "energy_for_order", "gradient_f", "hessian_f", "inactivity_test", "kkt_check", "newton_refine",
    "objective_f", "oracle_solve", "perturb_ties", "queue_update", "run_simulation", "run_sweep",
    "schedule_slot", "solve_band", "solve_gains", "stability_diagnostic", "superposition_energies",
    "update_lagrange", "validate_config",
]
