"""Identify gradient-flow dynamics by fitting max-affine (convex or DC) potentials."""

from .builder import Dataset, FitConfig, FitResult, Variant, build_fit, fit
from .data import (
    ExperimentConfig,
    FieldSpec,
    Trajectory,
    add_state_noise,
    assemble_dataset,
    estimate_derivatives,
    quartic_field,
    simulate_gradient_flow,
    split_dataset,
)
from .evaluation import FitReport, cross_validate, r_squared, reproduce_paper_experiment
from .potential import (
    DcPotential,
    MaxAffinePotential,
    eval_max_affine,
    eval_smoothed,
    grad_smoothed,
    hessian_smoothed,
    predict_field,
    tau_for_accuracy,
)
from .qp import QpProblem, QpSolution, SolverSettings, Status, kkt_residuals, solve_qp

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FitConfig", "FitResult", "Variant", "build_fit", "fit",
    "ExperimentConfig", "FieldSpec", "Trajectory", "add_state_noise", "assemble_dataset",
    "estimate_derivatives", "quartic_field", "simulate_gradient_flow", "split_dataset",
    "FitReport", "cross_validate", "r_squared", "reproduce_paper_experiment",
    "DcPotential", "MaxAffinePotential", "eval_max_affine", "eval_smoothed", "grad_smoothed",
    "hessian_smoothed", "predict_field", "tau_for_accuracy",
    "QpProblem", "QpSolution", "SolverSettings", "Status", "kkt_residuals", "solve_qp",
]
