"""Demixing of summed low-rank matrix measurements via hard thresholding."""

from .arip import AripEstimate, arip_sample, arip_scaling_report
from .ensembles import (
    DEFAULT_ENTRY_BUDGET,
    MeasurementEnsemble,
    ensemble_from_descriptor,
    ensemble_from_matrices,
    generate_ensemble,
    identity_ensemble,
)
from .estimator import Demixer
from .factors import CoreUpdate, HermitianFactor, LowRankFactor, TangentSpace
from .kernels import (
    core_update,
    hard_threshold,
    hermitian_core_update,
    psd_rank_project,
    simplex_project,
    tangent_project,
    threshold_core,
    truncated_svd,
)
from .solvers import (
    ConvergenceDiagnostics,
    DemixProblem,
    SolveReport,
    SolverConfig,
    diagnostics,
    fiht_psd_step,
    fiht_step,
    iht_step,
    initialize,
    solve,
    solve_rank_increasing,
    stacked_error,
    step_size,
    success_test,
)
from .validation import DegenerateEnsembleError

__version__ = "0.1.0"

__all__ = [
    "AripEstimate",
    "ConvergenceDiagnostics",
    "CoreUpdate",
    "DEFAULT_ENTRY_BUDGET",
    "DegenerateEnsembleError",
    "Demixer",
    "DemixProblem",
    "HermitianFactor",
    "LowRankFactor",
    "MeasurementEnsemble",
    "SolveReport",
    "SolverConfig",
    "TangentSpace",
    "arip_sample",
    "arip_scaling_report",
    "core_update",
    "diagnostics",
    "ensemble_from_descriptor",
    "ensemble_from_matrices",
    "fiht_psd_step",
    "fiht_step",
    "generate_ensemble",
    "hard_threshold",
    "hermitian_core_update",
    "identity_ensemble",
    "iht_step",
    "initialize",
    "psd_rank_project",
    "simplex_project",
    "solve",
    "solve_rank_increasing",
    "stacked_error",
    "step_size",
    "success_test",
    "tangent_project",
    "threshold_core",
    "truncated_svd",
]
