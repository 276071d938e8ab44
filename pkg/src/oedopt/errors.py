"""
异常定义模块

所有库内异常都继承自OEDError，并携带结构化的上下文信息。
"""

from typing import Any, Dict, Optional

import numpy as np


class OEDError(Exception):
    """实验设计库的基础异常"""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context = context or {}


class ConfigurationError(OEDError):
    """配置或维度错误"""

    def __init__(self, message: str, path: Optional[str] = None, context: Optional[Dict[str, Any]] = None):
        super().__init__(message, context)
        self.path = path

    def __str__(self) -> str:
        message = super().__str__()
        if self.path:
            return f"{message} ({self.path})"
        return message


class ModelEvaluationError(OEDError):
    """正向模型输出非有限值"""

    def __init__(self, message: str, xi: Optional[np.ndarray] = None, theta: Optional[np.ndarray] = None):
        super().__init__(message, {"xi": xi, "theta": theta})
        self.xi = None if xi is None else np.array(xi, dtype=float)
        self.theta = None if theta is None else np.array(theta, dtype=float)


class SingularFitError(OEDError):
    """拉普拉斯精度矩阵非正定"""


class BoundaryError(OEDError):
    """在均匀先验的支撑边界上请求Hessian"""


class GradientError(OEDError):
    """梯度估计含非有限值"""

    def __init__(self, message: str, grad: Optional[np.ndarray] = None):
        super().__init__(message, {"grad": grad})
        self.grad = grad
