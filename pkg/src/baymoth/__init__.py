"""Meta-informed two-step lookahead Bayesian optimization (BayMOTH)."""
from .acquisition import OptimizerConfig, expected_improvement, maximize_acquisition, mc_estimate
from .benchmark import ExperimentPlan, TaskSpec, generate_task_set, run_experiment, source_usage
from .estimator import BayMOTH
from .gp import Dataset, Domain, ExactGPRegressor, KernelConfig, fit_gp, predict
from .meta import build_environments, ncc, select_environment
from .policy import PolicyConfig, SessionState, ask, run_policy, tell

__version__ = "0.1.0"

__all__ = [
    "BayMOTH", "Dataset", "Domain", "ExactGPRegressor", "ExperimentPlan", "KernelConfig",
    "OptimizerConfig", "PolicyConfig", "SessionState", "TaskSpec", "ask", "build_environments",
    "expected_improvement", "fit_gp", "generate_task_set", "maximize_acquisition",
    "mc_estimate", "ncc", "predict", "run_experiment", "run_policy", "select_environment",
    "source_usage", "tell",
]
