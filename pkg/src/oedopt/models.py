"""
正向模型模块

提供正向模型抽象、内置解析模型（随机二次函数、二次OED模型、Timoshenko梁、
线性高斯模型）以及有限差分微分算子。
"""

import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Type

import numpy as np

from .errors import ConfigurationError, ModelEvaluationError

logger = logging.getLogger(__name__)


FD_MODES = ("forward", "central")
DEFAULT_REL_STEP = {"forward": 1e-6, "central": 1e-5}


@dataclass
class FDScheme:
    """有限差分格式"""
    mode: str = "forward"
    rel_step: Optional[float] = None

    def __post_init__(self):
        """验证配置"""
        if self.mode not in FD_MODES:
            raise ConfigurationError(f"未知的有限差分模式: {self.mode}", path="fd.mode")
        if self.rel_step is None:
            self.rel_step = DEFAULT_REL_STEP[self.mode]
        if not 0.0 < self.rel_step <= 1e-2:
            raise ConfigurationError(f"相对步长必须在 (0, 1e-2] 内: {self.rel_step}", path="fd.rel_step")

    @property
    def is_central(self) -> bool:
        return self.mode == "central"

    def steps(self, x: np.ndarray) -> np.ndarray:
        """逐坐标步长 h_i = rel_step * max(1, |x_i|)"""
        return self.rel_step * np.maximum(1.0, np.abs(x))

    def stencil_size(self, n: int) -> int:
        """n个坐标的模板点数"""
        return 2 * n if self.is_central else n + 1


def fd_stencil(x: np.ndarray, scheme: FDScheme) -> Tuple[np.ndarray, np.ndarray]:
    """
    构造有限差分模板点

    前向格式：第0行为基点，第1+i行为沿第i坐标的扰动点；
    中心格式：第2i、2i+1行分别为 x+h_i e_i 和 x-h_i e_i。

    Returns:
        (模板点 (P, n), 实际步长 (n,))
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    h = scheme.steps(x)
    eye = np.eye(n)
    if scheme.is_central:
        plus = x + h[:, None] * eye
        minus = x - h[:, None] * eye
        points = np.empty((2 * n, n))
        points[0::2] = plus
        points[1::2] = minus
        steps = (np.diag(plus) - np.diag(minus)) / 2.0
    else:
        perturbed = x + h[:, None] * eye
        points = np.vstack([x[None, :], perturbed])
        steps = np.diag(perturbed) - x
    return points, steps


def fd_combine(values: np.ndarray, steps: np.ndarray, scheme: FDScheme) -> np.ndarray:
    """
    由模板点上的函数值组合出导数

    Args:
        values: 形状 (P, ...) 的函数值
        steps: fd_stencil返回的步长

    Returns:
        形状 (..., n) 的导数，最后一维对应被微分的坐标
    """
    values = np.asarray(values, dtype=float)
    shape = (-1,) + (1,) * (values.ndim - 1)
    if scheme.is_central:
        derivative = (values[0::2] - values[1::2]) / (2.0 * steps.reshape(shape))
    else:
        derivative = (values[1:] - values[0]) / steps.reshape(shape)
    return np.moveaxis(derivative, 0, -1)


class ForwardModel(ABC):
    """
    正向模型 g(xi, theta) 的抽象基类

    子类实现 response（单点）或 response_many（批量）。evaluate 系列方法
    负责维度检查、有限性检查和调用计数；计数器在线程间安全累加。
    """

    name = "custom"
    has_analytic_gradient = False

    def __init__(self, dim_xi: int, d: int, r: int, bounds: Optional[Sequence[Sequence[float]]] = None):
        if dim_xi < 1 or d < 1 or r < 1:
            raise ConfigurationError(f"模型维度必须为正整数: dim_xi={dim_xi}, d={d}, r={r}", path="model")
        self.dim_xi = int(dim_xi)
        self.d = int(d)
        self.r = int(r)
        if bounds is None:
            bounds = [[-np.inf, np.inf]] * self.dim_xi
        self.bounds = np.array(bounds, dtype=float).reshape(self.dim_xi, 2)
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ConfigurationError(f"设计边界必须满足 lo < hi: {self.bounds.tolist()}", path="model.bounds")
        self._eval_counter = 0
        self._lock = threading.Lock()

    @property
    def eval_counter(self) -> int:
        """累计的模型调用次数"""
        return self._eval_counter

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    def reset_counter(self) -> None:
        with self._lock:
            self._eval_counter = 0

    def _count(self, calls: int) -> None:
        with self._lock:
            self._eval_counter += calls

    def check_design(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if xi.size != self.dim_xi:
            raise ConfigurationError(f"设计向量维度不匹配: 期望 {self.dim_xi}, 实际 {xi.size}", path="xi")
        return xi

    def check_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.d:
            raise ConfigurationError(f"参数向量维度不匹配: 期望 {self.d}, 实际 {theta.size}", path="theta")
        return theta

    @abstractmethod
    def response(self, xi: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """计算单点响应 g(xi, theta)，返回长度为 r 的向量"""

    def response_many(self, xi: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        """批量响应，默认逐点调用 response"""
        return np.array([self.response(xi, theta) for theta in thetas], dtype=float).reshape(len(thetas), self.r)

    def evaluate(self, xi, theta) -> np.ndarray:
        """
        计算 g(xi, theta)，计数器加一

        Raises:
            ConfigurationError: 维度不匹配
            ModelEvaluationError: 输出含非有限值
        """
        xi = self.check_design(xi)
        theta = self.check_params(theta)
        self._count(1)
        output = np.asarray(self.response(xi, theta), dtype=float).reshape(self.r)
        if not np.all(np.isfinite(output)):
            raise ModelEvaluationError(f"模型输出非有限值: xi={xi}, theta={theta}", xi=xi, theta=theta)
        return output

    def evaluate_many(self, xi, thetas) -> np.ndarray:
        """
        在同一设计点批量计算，计数器增加 len(thetas)

        Returns:
            形状 (n, r) 的响应矩阵
        """
        xi = self.check_design(xi)
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.d)
        self._count(len(thetas))
        outputs = np.asarray(self.response_many(xi, thetas), dtype=float).reshape(len(thetas), self.r)
        finite = np.all(np.isfinite(outputs), axis=1)
        if not np.all(finite):
            bad = thetas[int(np.argmin(finite))]
            raise ModelEvaluationError(f"模型输出非有限值: xi={xi}, theta={bad}", xi=xi, theta=bad)
        return outputs

    def gradient_xi(self, xi, theta) -> np.ndarray:
        """解析设计梯度（r x dim_xi），仅部分内置模型提供"""
        raise NotImplementedError(f"模型 {self.name} 不提供解析设计梯度")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim_xi={self.dim_xi}, d={self.d}, r={self.r})"


class StochasticQuadraticModel(ForwardModel):
    """
    随机二次函数 f(xi, theta) = -(xi·A·xi/2 + xi·A·theta)

    A = diag(1, ..., n)。这不是OED问题，而是用于比较优化器的随机目标。
    """

    name = "example1_quadratic"
    has_analytic_gradient = True

    def __init__(self, n: int = 20):
        if n < 1:
            raise ConfigurationError(f"维度n必须为正整数: {n}", path="model.params.n")
        super().__init__(dim_xi=n, d=n, r=1)
        self.diag = np.arange(1, n + 1, dtype=float)

    @property
    def A(self) -> np.ndarray:
        return np.diag(self.diag)

    @property
    def lipschitz(self) -> float:
        """目标函数Hessian的最大特征值 L"""
        return float(self.diag.max())

    @property
    def strong_convexity(self) -> float:
        """目标函数Hessian的最小特征值 mu"""
        return float(self.diag.min())

    @property
    def optimal_q(self) -> float:
        return self.strong_convexity / self.lipschitz

    @property
    def optimal_step(self) -> float:
        return 2.0 / (self.lipschitz + self.strong_convexity)

    def response(self, xi, theta):
        return np.array([-(0.5 * xi @ (self.diag * xi) + xi @ (self.diag * theta))])

    def response_many(self, xi, thetas):
        return -(0.5 * xi @ (self.diag * xi) + thetas @ (self.diag * xi))[:, None]

    def gradient_xi(self, xi, theta) -> np.ndarray:
        """G(xi, theta) = -A·(xi + theta)，记为一次调用"""
        xi = self.check_design(xi)
        theta = self.check_params(theta)
        self._count(1)
        return (-self.diag * (xi + theta))[None, :]


class QuadraticOEDModel(ForwardModel):
    """二次OED模型 g = (xi·A·xi) theta - (xi·A·1) theta^2 - 8 theta - 1"""

    name = "example2_quadratic_oed"

    def __init__(self, A: Optional[Sequence[Sequence[float]]] = None, bound: float = 2.0):
        A = np.array([[1.0, -0.2], [-0.2, 0.5]] if A is None else A, dtype=float)
        if A.shape != (2, 2):
            raise ConfigurationError(f"矩阵A必须为2x2: {A.shape}", path="model.params.A")
        super().__init__(dim_xi=2, d=1, r=1, bounds=[[-bound, bound], [-bound, bound]])
        self.A = A

    def response(self, xi, theta):
        return self.response_many(xi, theta.reshape(1, 1))[0]

    def response_many(self, xi, thetas):
        t = thetas[:, 0]
        quad = xi @ self.A @ xi
        lin = xi @ self.A @ np.ones(2)
        return (quad * t - lin * t ** 2 - 8.0 * t - 1.0)[:, None]


class TimoshenkoBeamModel(ForwardModel):
    """
    Timoshenko梁应变片模型

    设计 xi = (x1, x2)，单位mm；参数 theta = (E, G)，单位MPa；
    输出 (eps11, eps12)。截面为矩形，I_n = b h^3 / 12，A_r = b h。
    """

    name = "timoshenko"

    def __init__(
        self,
        length: float = 10000.0,
        height: float = 2000.0,
        base: float = 100.0,
        load: float = 1.00,
        shear_coefficient: float = 5.0 / 6.0,
    ):
        if min(length, height, base, shear_coefficient) <= 0:
            raise ConfigurationError("梁的几何参数必须为正", path="model.params")
        super().__init__(dim_xi=2, d=2, r=2, bounds=[[0.0, length], [-height / 2.0, height / 2.0]])
        self.length = float(length)
        self.height = float(height)
        self.base = float(base)
        # kN/mm -> N/mm，与MPa (N/mm^2) 一致
        self.load = float(load) * 1000.0
        self.shear_coefficient = float(shear_coefficient)
        self.inertia = self.base * self.height ** 3 / 12.0
        self.area = self.base * self.height

    def response(self, xi, theta):
        return self.response_many(xi, theta.reshape(1, 2))[0]

    def response_many(self, xi, thetas):
        x1, x2 = xi
        q, L = self.load, self.length
        eps11 = x2 * (q * L * x1 - q * x1 ** 2) / (2.0 * thetas[:, 0] * self.inertia)
        eps12 = (L / 2.0 * q - q * x1) / (self.shear_coefficient * thetas[:, 1] * self.area)
        return np.column_stack([eps11, eps12])


class LinearGaussianModel(ForwardModel):
    """线性模型 g = J·theta + B·xi，配合高斯先验时有解析的信息增益"""

    name = "linear_gaussian"

    def __init__(
        self,
        J: Optional[Sequence[Sequence[float]]] = None,
        B: Optional[Sequence[Sequence[float]]] = None,
        dim_xi: int = 1,
        bound: float = 10.0,
    ):
        J = np.atleast_2d(np.array([[1.0]] if J is None else J, dtype=float))
        r, d = J.shape
        B = np.zeros((r, dim_xi)) if B is None else np.atleast_2d(np.array(B, dtype=float))
        if B.shape != (r, dim_xi):
            raise ConfigurationError(f"矩阵B形状应为 {(r, dim_xi)}: {B.shape}", path="model.params.B")
        super().__init__(dim_xi=dim_xi, d=d, r=r, bounds=[[-bound, bound]] * dim_xi)
        self.J = J
        self.B = B

    def response(self, xi, theta):
        return self.J @ theta + self.B @ xi

    def response_many(self, xi, thetas):
        return thetas @ self.J.T + self.B @ xi


BUILTIN_MODELS: Dict[str, Type[ForwardModel]] = {
    StochasticQuadraticModel.name: StochasticQuadraticModel,
    QuadraticOEDModel.name: QuadraticOEDModel,
    TimoshenkoBeamModel.name: TimoshenkoBeamModel,
    LinearGaussianModel.name: LinearGaussianModel,
}


def builtin(name: str, params: Optional[Dict[str, Any]] = None) -> ForwardModel:
    """
    按名称创建内置模型

    Args:
        name: example1_quadratic / example2_quadratic_oed / timoshenko / linear_gaussian
        params: 模型参数

    Returns:
        配置好的正向模型

    Raises:
        ConfigurationError: 未知名称或非法参数
    """
    model_cls = BUILTIN_MODELS.get(name)
    if model_cls is None:
        raise ConfigurationError(f"未知的模型名称: {name}", path="model.name")
    try:
        model = model_cls(**(params or {}))
    except TypeError as e:
        raise ConfigurationError(f"模型参数非法: {e}", path="model.params")
    logger.debug(f"创建内置模型: {model!r}")
    return model


def create_model(name: str, **params) -> ForwardModel:
    """创建内置模型的便捷函数"""
    return builtin(name, params)


def jac_theta(model: ForwardModel, xi, theta, scheme: Optional[FDScheme] = None) -> np.ndarray:
    """
    有限差分估计 ∇_theta g（r x d）

    前向格式消耗 d+1 次调用，中心格式消耗 2d 次。
    """
    scheme = scheme or FDScheme()
    theta = model.check_params(theta)
    points, steps = fd_stencil(theta, scheme)
    values = model.evaluate_many(xi, points)
    return fd_combine(values, steps, scheme)


def jac_xi(model: ForwardModel, xi, theta, scheme: Optional[FDScheme] = None) -> np.ndarray:
    """
    有限差分估计 ∇_xi g（r x dim_xi）

    前向格式消耗 dim_xi+1 次调用，中心格式消耗 2 dim_xi 次。
    """
    scheme = scheme or FDScheme()
    xi = model.check_design(xi)
    theta = model.check_params(theta)
    points, steps = fd_stencil(xi, scheme)
    values = np.array([model.evaluate(point, theta) for point in points])
    return fd_combine(values, steps, scheme)


@dataclass
class DerivativeGrid:
    """一次嵌套差分求得的导数"""
    jac_theta: np.ndarray   # (r, d)
    cross: np.ndarray       # (r, dim_xi, d)
    cost: int


def derivative_grid(model: ForwardModel, xi, theta, scheme: Optional[FDScheme] = None) -> DerivativeGrid:
    """
    嵌套差分同时求 ∇_theta g 与 ∇_xi∇_theta g

    前向格式在 (dim_xi+1) x (d+1) 网格上求值，∇_theta g 取自基点行，
    总成本 (dim_xi+1)(d+1)；中心格式成本 2d + 4 dim_xi d。
    """
    scheme = scheme or FDScheme()
    xi = model.check_design(xi)
    theta = model.check_params(theta)
    theta_points, theta_steps = fd_stencil(theta, scheme)
    xi_points, xi_steps = fd_stencil(xi, scheme)

    if scheme.is_central:
        jac = fd_combine(model.evaluate_many(xi, theta_points), theta_steps, scheme)
        # (2 dim_xi, r, d)：每个扰动设计点上的 ∇_theta g
        jacs = np.array([
            fd_combine(model.evaluate_many(point, theta_points), theta_steps, scheme)
            for point in xi_points
        ])
        cost = len(theta_points) * (len(xi_points) + 1)
    else:
        grid = np.array([model.evaluate_many(point, theta_points) for point in xi_points])
        jacs = np.array([fd_combine(values, theta_steps, scheme) for values in grid])
        jac = jacs[0]
        cost = len(theta_points) * len(xi_points)

    cross = fd_combine(jacs, xi_steps, scheme)  # (r, d, dim_xi)
    return DerivativeGrid(jac_theta=jac, cross=np.swapaxes(cross, 1, 2), cost=cost)


def cross_jac(model: ForwardModel, xi, theta, scheme: Optional[FDScheme] = None) -> np.ndarray:
    """
    嵌套有限差分估计 ∇_xi∇_theta g（r x dim_xi x d）

    前向格式成本 (dim_xi+1)(d+1) 次调用。
    """
    return derivative_grid(model, xi, theta, scheme).cross


def design_derivative(fn: Callable[[np.ndarray], np.ndarray], xi, scheme: FDScheme) -> np.ndarray:
    """对任意设计函数做有限差分，fn在每个模板点调用一次"""
    points, steps = fd_stencil(np.asarray(xi, dtype=float), scheme)
    return fd_combine(np.array([fn(point) for point in points]), steps, scheme)
