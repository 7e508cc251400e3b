"""Coupled tensor-ring completion.

Tensors are numpy arrays linearized in C order; modes are numbered from 1
in the public API.
"""

from .bound import (
    BoundParams,
    beta_ratio_power,
    coupled_bound,
    df_star,
    individual_bound,
    pfq,
    select_epsilon,
    supremum_bound,
)
from .config import SolveReport, SolverConfig
from .coupled import (
    CoupledProblem,
    CouplingSpec,
    assemble_coupled_hessian,
    objective,
    solve_ctrc,
    update_coupled_factor,
    update_uncoupled_factor,
)
from .ring import StructureError, TRFactorSet, subchain, tr_als_complete, tr_contract, tr_svd
from .rowsolve import row_update_uncoupled
from .synthetic import SyntheticSpec, generate_synthetic, rmse
from .tensor import (
    DimensionError,
    ObservationMask,
    coupled_fnorm,
    fnorm,
    fold_shift,
    hadamard,
    project,
    unfold_shift,
)

__all__ = [
    "assemble_coupled_hessian", "beta_ratio_power", "BoundParams", "coupled_bound",
    "coupled_fnorm", "CoupledProblem", "CouplingSpec", "df_star", "DimensionError", "fnorm",
    "fold_shift", "generate_synthetic", "hadamard", "individual_bound", "objective",
    "ObservationMask", "pfq", "project", "rmse", "row_update_uncoupled", "select_epsilon",
    "solve_ctrc", "SolverConfig", "SolveReport", "StructureError", "subchain", "supremum_bound",
    "SyntheticSpec", "tr_als_complete", "tr_contract", "tr_svd", "TRFactorSet", "unfold_shift",
    "update_coupled_factor", "update_uncoupled_factor",
]

__version__ = "0.1.0"
