"""Policy-gradient sizing of discrete design spaces with a learned reward model."""

from .env import AnalyticOpAmp, ExternalSimConfig, ExternalSimulator, OpAmpModelConfig, Sample, make_env
from .policy import Baseline, PolicyGenerator, PolicyUpdateConfig, evaluate_policy
from .reward import ConfigError, ConstraintSpec, EvaluationError, RewardValue, default_constraints, score
from .space import ActionError, ParameterSpace, ParamSpec, default_opamp_space
from .surrogate import PER_METRIC, SCALAR, RegressionConfig, RewardModel
from .trainer import Agent, RunLog, SampleBuffer, Streams, TrainerConfig, run_dyna, run_model_based, run_model_free, run_transfer

__version__ = "0.1.0"

__all__ = [
    "AnalyticOpAmp",
    "ExternalSimConfig",
    "ExternalSimulator",
    "OpAmpModelConfig",
    "Sample",
    "make_env",
    "Baseline",
    "PolicyGenerator",
    "PolicyUpdateConfig",
    "evaluate_policy",
    "ConfigError",
    "ConstraintSpec",
    "EvaluationError",
    "RewardValue",
    "default_constraints",
    "score",
    "ActionError",
    "ParameterSpace",
    "ParamSpec",
    "default_opamp_space",
    "PER_METRIC",
    "SCALAR",
    "RegressionConfig",
    "RewardModel",
    "Agent",
    "RunLog",
    "SampleBuffer",
    "Streams",
    "TrainerConfig",
    "run_dyna",
    "run_model_based",
    "run_model_free",
    "run_transfer",
]
