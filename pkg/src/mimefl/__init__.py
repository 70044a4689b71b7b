"""Deterministic simulator for federated optimization with Mime-style rounds."""

from .algorithms import (
    ALGORITHMS,
    AlgoConfig,
    RoundRecord,
    ServerRoundState,
    comm_cost,
    init_server_state,
    run_round,
    run_rounds,
    theory_schedule,
)
from .base_opt import OptimizerSpec, init_state, lipschitz_bound, u_step, v_step
from .core import ContractViolation, RngStream, derive_stream, weighted_average
from .problems import (
    ClientPopulation,
    LogisticSpec,
    QuadraticSpec,
    global_optimum,
    make_logistic_population,
    make_quadratic_population,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AlgoConfig",
    "ClientPopulation",
    "ContractViolation",
    "LogisticSpec",
    "OptimizerSpec",
    "QuadraticSpec",
    "RngStream",
    "RoundRecord",
    "ServerRoundState",
    "comm_cost",
    "derive_stream",
    "global_optimum",
    "init_server_state",
    "init_state",
    "lipschitz_bound",
    "make_logistic_population",
    "make_quadratic_population",
    "run_round",
    "run_rounds",
    "theory_schedule",
    "u_step",
    "v_step",
    "weighted_average",
]
