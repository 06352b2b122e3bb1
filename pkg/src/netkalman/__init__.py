"""Distributed Kalman filtering of dynamic random fields over sparse agent
networks: model generation and validation, pseudo-state algebra, offline
optimal-gain design, online per-agent filtering with a centralized oracle,
stability/tracking-capacity analysis, and a Monte-Carlo MSE harness."""

__version__ = "0.1.0"

from .capacity import (CapacityEstimate, StabilityReport, capacity_lower_bound,
                       schedule_stability, spectral_norm, spectral_radius,
                       spectral_tools, stability_check)
from .errors import (ConfigurationError, GenerationError, ModelError,
                     NetkalmanError, ParameterError, SequencingError,
                     StructureError)
from .filtering import (CentralizedRun, NetworkEstimate, Trajectory, ckf_run,
                        cikf_init, cikf_run, cikf_step, simulate_truth)
from .gains import (CovarianceState, GainSchedule, InnovationCovariances,
                    StepGains, check_covariance_state, init_covariances,
                    innovation_covariances, precompute_schedule,
                    predict_covariance_update, step_gains_and_filter_covariances)
from .harness import (ComparisonSummary, EmpiricalMoments, MseReport,
                      export_results, mse_compare, plot_mse_svg, run_montecarlo)
from .model import (GraphSpectrum, ModelSpec, ValidationReport,
                    generate_paper_model, laplacian_spectrum, load_model,
                    model_hash, random_spd, save_model, validate_model)
from .pseudo import (PseudoModel, build_pseudo_model, pinv, pseudo_observation,
                     pseudo_state)

__all__ = [
    "CapacityEstimate", "CentralizedRun", "ComparisonSummary",
    "ConfigurationError", "CovarianceState", "EmpiricalMoments",
    "GainSchedule", "GenerationError", "GraphSpectrum",
    "InnovationCovariances", "ModelError", "ModelSpec", "MseReport",
    "NetkalmanError", "NetworkEstimate", "ParameterError", "PseudoModel",
    "SequencingError", "StabilityReport", "StepGains", "StructureError",
    "Trajectory", "ValidationReport", "build_pseudo_model",
    "capacity_lower_bound", "check_covariance_state", "ckf_run", "cikf_init",
    "cikf_run", "cikf_step", "export_results", "generate_paper_model",
    "init_covariances", "innovation_covariances", "laplacian_spectrum",
    "load_model", "model_hash", "mse_compare", "pinv", "plot_mse_svg",
    "precompute_schedule", "predict_covariance_update", "pseudo_observation",
    "pseudo_state", "random_spd", "run_montecarlo", "save_model",
    "schedule_stability", "simulate_truth", "spectral_norm",
    "spectral_radius", "spectral_tools", "stability_check",
    "step_gains_and_filter_covariances", "validate_model",
]
