"""
贝叶斯最优实验设计的随机梯度优化工具

以期望信息增益（EIG）为目标，提供DLMC、MCLA、DLMCIS三种估计器，
对应的随机梯度，以及SGD、Nesterov加速SGD与重启加速SGD优化器。
"""

__version__ = "0.1.0"
__author__ = "oedopt Team"
__email__ = ""
__description__ = "基于期望信息增益的贝叶斯最优实验设计优化工具"

# 导入主要模块
from .errors import (
    BoundaryError,
    ConfigurationError,
    GradientError,
    ModelEvaluationError,
    OEDError,
    SingularFitError,
)
from .models import ForwardModel, FDScheme, builtin, create_model
from .bayes import BayesProblem, LaplaceFit, NoiseModel, Prior, create_problem, laplace_covariance, map_estimate
from .estimators import EIGEstimate, EstimatorConfig, eig_dlmc, eig_dlmcis, eig_mcla, estimate_eig
from .gradients import GradientConfig, GradientEstimate, estimate_gradient, full_gradient
from .optimizers import OptimizerConfig, OptimizerTrace, create_optimizer_config, run
from .config import Config, get_config

__all__ = [
    "OEDError",
    "ConfigurationError",
    "ModelEvaluationError",
    "SingularFitError",
    "BoundaryError",
    "GradientError",
    "ForwardModel",
    "FDScheme",
    "builtin",
    "create_model",
    "Prior",
    "NoiseModel",
    "LaplaceFit",
    "BayesProblem",
    "create_problem",
    "map_estimate",
    "laplace_covariance",
    "EstimatorConfig",
    "EIGEstimate",
    "eig_dlmc",
    "eig_mcla",
    "eig_dlmcis",
    "estimate_eig",
    "GradientConfig",
    "GradientEstimate",
    "estimate_gradient",
    "full_gradient",
    "OptimizerConfig",
    "OptimizerTrace",
    "create_optimizer_config",
    "run",
    "Config",
    "get_config",
]
