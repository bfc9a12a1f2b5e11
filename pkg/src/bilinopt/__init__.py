"""Data-driven point-to-point optimal control of bilinear systems.

Learns open-loop controls for unknown discrete-time bilinear systems
directly from one persistently exciting input/state experiment: Hankel data
matrices certify excitation, a coefficient vector parametrizes every
length-T trajectory, and a convex-concave procedure over a lifted quadratic
program finds a locally optimal control, all without identifying the system
matrices.
"""

from .systems import (
    BilinearSystem,
    DivergenceError,
    Trajectory,
    load_fixture,
    fixture_problem,
    random_system,
    simulate,
    step,
)
from .hankel import (
    DataMatrices,
    RankCertificate,
    RankDeficientError,
    build_data_matrices,
    hankel,
    identify_system,
    min_data_length,
    rank_certificate,
    recover_markov_blocks,
)
from .represent import (
    Alpha,
    ReconstructedTrajectory,
    check_bilinear_consistency,
    reconstruct,
    represent,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    NonTerminationError,
    SimulatedPlant,
    design_experiment,
    random_experiment,
)
from .qcqp import ConstraintBlock, ConvexQcqp, SolveReport, SolverSettings
from .qcqp import solve as qcqp_solve
from .ccp import (
    CcpSettings,
    CcpSolution,
    ControlExtraction,
    InitializationError,
    LiftedProblem,
    OcProblem,
    build_p2,
    ccp_solve,
    extract_control,
    find_initial_alpha,
    lift_to_p3,
    solve_from_data,
)
from .shooting import ShootingResult, UnreachableTargetError, shooting_solve

__version__ = "1.0.0"

__all__ = [
    "Alpha",
    "BilinearSystem",
    "CcpSettings",
    "CcpSolution",
    "ConstraintBlock",
    "ControlExtraction",
    "ConvexQcqp",
    "DataMatrices",
    "DivergenceError",
    "ExperimentConfig",
    "ExperimentResult",
    "InitializationError",
    "LiftedProblem",
    "NonTerminationError",
    "OcProblem",
    "RankCertificate",
    "RankDeficientError",
    "ReconstructedTrajectory",
    "ShootingResult",
    "SimulatedPlant",
    "SolveReport",
    "SolverSettings",
    "Trajectory",
    "UnreachableTargetError",
    "build_data_matrices",
    "build_p2",
    "ccp_solve",
    "check_bilinear_consistency",
    "design_experiment",
    "extract_control",
    "find_initial_alpha",
    "fixture_problem",
    "hankel",
    "identify_system",
    "lift_to_p3",
    "load_fixture",
    "min_data_length",
    "qcqp_solve",
    "random_experiment",
    "random_system",
    "rank_certificate",
    "reconstruct",
    "recover_markov_blocks",
    "represent",
    "shooting_solve",
    "simulate",
    "solve_from_data",
    "step",
]
