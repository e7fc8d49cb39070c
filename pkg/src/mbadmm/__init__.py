"""Multi-block ADMM: solver engines, a proximal toolkit, a coordinator/worker
simulator and two applications (DC security-constrained OPF and mobile
data offloading)."""

from .engines import (
    ENGINES,
    build_correction_matrices,
    default_prox_weights,
    run_gauss_seidel,
    run_gbs,
    run_jacobi,
    run_prox_jacobi,
    run_two_block,
    run_variable_splitting,
)
from .problem import (
    AffineEquality,
    Block,
    BlockProblem,
    BlockVector,
    Box,
    Free,
    Linear,
    NegLogAffine,
    NonNegCappedSum,
    Quadratic,
    SmoothOracle,
    Zero,
    assemble_problem,
    dumps_problem,
    loads_problem,
    objective_value,
    primal_residual,
)
from .trace import ConvergenceReport, IterationTrace, SolverConfig, Status

__version__ = "0.1.0"

__all__ = [
    "ENGINES",
    "build_correction_matrices",
    "default_prox_weights",
    "run_gauss_seidel",
    "run_gbs",
    "run_jacobi",
    "run_prox_jacobi",
    "run_two_block",
    "run_variable_splitting",
    "AffineEquality",
    "Block",
    "BlockProblem",
    "BlockVector",
    "Box",
    "Free",
    "Linear",
    "NegLogAffine",
    "NonNegCappedSum",
    "Quadratic",
    "SmoothOracle",
    "Zero",
    "assemble_problem",
    "dumps_problem",
    "loads_problem",
    "objective_value",
    "primal_residual",
    "ConvergenceReport",
    "IterationTrace",
    "SolverConfig",
    "Status",
]
