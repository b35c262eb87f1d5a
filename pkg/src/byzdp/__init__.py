"""Simulator for Byzantine-robust, locally differentially private distributed optimization."""
from .aggregation import (AggregatorSpec, aggregate, certify_robustness, coordinate_median, geometric_median,
                          nnm_mix, trimmed_mean)
from .algorithm import (HyperParams, StepRecord, eta_from_state, lyapunov, step_byz_clip21_sgd2m,
                        step_byz_clip_sgd, step_no_dp, step_plus, step_safe_dshb)
from .attack import AttackSpec, byzantine_message, flip_labels
from .core import ClientState, NumericAbort, RngStream, ServerState, Streams, axpy, norm2
from .harness import RunConfig, RunTrace, grid, run, summarize
from .privacy import DPConfig, advanced_composition, clip, gaussian_noise, sigma_for_budget, verify_clip_lemma
from .problem import LogRegProblem, QuadraticProblem, exact_grad, make_quadratic, measure_zeta, partition_dataset

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec", "aggregate", "certify_robustness", "coordinate_median", "geometric_median", "nnm_mix",
    "trimmed_mean", "HyperParams", "StepRecord", "eta_from_state", "lyapunov", "step_byz_clip21_sgd2m",
    "step_byz_clip_sgd", "step_no_dp", "step_plus", "step_safe_dshb", "AttackSpec", "byzantine_message",
    "flip_labels", "ClientState", "NumericAbort", "RngStream", "ServerState", "Streams", "axpy", "norm2",
    "RunConfig", "RunTrace", "grid", "run", "summarize", "DPConfig", "advanced_composition", "clip",
    "gaussian_noise", "sigma_for_budget", "verify_clip_lemma", "LogRegProblem", "QuadraticProblem", "exact_grad",
    "make_quadratic", "measure_zeta", "partition_dataset",
]
