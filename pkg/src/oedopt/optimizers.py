"""
优化器模块

最大化期望信息增益的上升循环：
- fgd:   全梯度上升（固定步长）
- sgd:   随机梯度上升
- asgd:  Nesterov加速随机梯度
- rasgd: 带重启的加速随机梯度（q固定为0）

所有迭代点在每次更新后投影回设计盒约束。
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .bayes import BayesProblem
from .errors import ConfigurationError, GradientError, OEDError
from .gradients import GradientConfig, GradientEstimate, estimate_gradient
from .sampling import RandomStreams, as_streams

logger = logging.getLogger(__name__)

METHODS = ("fgd", "sgd", "asgd", "rasgd")
SCHEDULES = ("constant", "inv_sqrt")
RESTART_CRITERIA = ("gradient", "speed", "always")
ACCELERATED = ("asgd", "rasgd")

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_BUDGET = "budget"
STATUS_FAILED = "failed"


@dataclass
class OptimizerConfig:
    """优化器配置"""
    method: str = "rasgd"
    alpha0: float = 1.0
    q: float = 0.0
    schedule: Optional[str] = None
    max_iters: int = 1000
    max_ncfm: Optional[int] = None
    seed: int = 0
    restart: str = "gradient"
    tol: float = 0.01
    bound_diameter: Optional[float] = None
    bound_sigma: Optional[float] = None
    log_every: int = 100

    def __post_init__(self):
        """验证配置并补全默认步长策略"""
        if self.method not in METHODS:
            raise ConfigurationError(f"未知的优化方法: {self.method}", path="optimizer.method")
        if self.alpha0 <= 0:
            raise ConfigurationError(f"初始步长必须为正: {self.alpha0}", path="optimizer.alpha0")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigurationError(f"q必须在 [0, 1] 内: {self.q}", path="optimizer.q")
        if self.schedule is None:
            self.schedule = "constant" if self.method == "fgd" else "inv_sqrt"
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"未知的步长策略: {self.schedule}", path="optimizer.schedule")
        if self.method == "fgd" and self.schedule != "constant":
            raise ConfigurationError("fgd只能使用固定步长", path="optimizer.schedule")
        if self.restart not in RESTART_CRITERIA:
            raise ConfigurationError(f"未知的重启准则: {self.restart}", path="optimizer.restart")
        if self.max_iters < 0:
            raise ConfigurationError(f"最大迭代次数不能为负: {self.max_iters}", path="optimizer.max_iters")
        if self.method == "rasgd" and self.q != 0.0:
            logger.warning(f"rasgd固定 q=0，忽略配置值 {self.q}")
            self.q = 0.0


@dataclass
class MomentumState:
    """Nesterov动量状态"""
    lam: float = 1.0
    z_prev: Optional[np.ndarray] = None
    restart_count: int = 0


@dataclass
class TraceRow:
    """
    单次迭代记录

    第k行保存迭代点ξ_k、滑动平均、从ξ_k出发的步长α_k，以及产生ξ_k那一步的
    动量系数、重启标志、梯度范数和累计NCFM。
    """
    k: int
    xi: np.ndarray
    xibar: np.ndarray
    alpha: float
    gamma: float = 0.0
    restart: bool = False
    grad_norm: float = float("nan")
    ncfm: int = 0


@dataclass
class OptimizerTrace:
    """优化轨迹及终止状态"""
    method: str
    rows: List[TraceRow] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    restarts: int = 0

    @property
    def iterations(self) -> int:
        return max(len(self.rows) - 1, 0)

    @property
    def xis(self) -> np.ndarray:
        return np.array([row.xi for row in self.rows])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([row.alpha for row in self.rows])

    @property
    def final_xi(self) -> np.ndarray:
        return self.rows[-1].xi

    @property
    def final_xibar(self) -> np.ndarray:
        return self.rows[-1].xibar

    @property
    def ncfm(self) -> int:
        return self.rows[-1].ncfm if self.rows else 0

    @property
    def succeeded(self) -> bool:
        return self.status != STATUS_FAILED

    def sliding_average(self, k: int) -> np.ndarray:
        return sliding_average(self.xis, self.alphas, k)

    def to_frame(self) -> pd.DataFrame:
        """转为表格，列为 k, xi_*, xibar_*, alpha, gamma, restart, grad_norm, ncfm"""
        dim = self.rows[0].xi.size if self.rows else 0
        records = []
        for row in self.rows:
            record = {"k": row.k}
            record.update({f"xi_{i}": float(row.xi[i]) for i in range(dim)})
            record.update({f"xibar_{i}": float(row.xibar[i]) for i in range(dim)})
            record.update({
                "alpha": row.alpha,
                "gamma": row.gamma,
                "restart": int(row.restart),
                "grad_norm": row.grad_norm,
                "ncfm": row.ncfm,
            })
            records.append(record)
        columns = ["k"] + [f"xi_{i}" for i in range(dim)] + [f"xibar_{i}" for i in range(dim)]
        columns += ["alpha", "gamma", "restart", "grad_norm", "ncfm"]
        return pd.DataFrame.from_records(records, columns=columns)

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def lambda_next(lam: float, q: float) -> float:
    """λ_{k+1}² = (1 - λ_{k+1}) λ_k² + q λ_{k+1} 的正根"""
    a = lam * lam - q
    return 0.5 * (-a + np.sqrt(a * a + 4.0 * lam * lam))


def gamma_next(lam: float, lam_next: float) -> float:
    """γ_{k+1} = λ_k (1 - λ_k) / (λ_k² + λ_{k+1})"""
    return lam * (1.0 - lam) / (lam * lam + lam_next)


def step_size(config: OptimizerConfig, k: int) -> float:
    """α_k = α_0 / √(k+1)（inv_sqrt，k从0开始），或常数 α_0"""
    if config.schedule == "constant":
        return config.alpha0
    return config.alpha0 / np.sqrt(k + 1.0)


def project(xi: np.ndarray, lower: Optional[np.ndarray], upper: Optional[np.ndarray]) -> np.ndarray:
    """逐坐标投影到盒约束"""
    if lower is None and upper is None:
        return xi
    return np.clip(xi, lower, upper)


def step(
    method: str,
    state: MomentumState,
    xi_k: np.ndarray,
    grad: Union[GradientEstimate, np.ndarray],
    alpha_k: float,
    q: float = 0.0,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
):
    """
    单步上升更新

    sgd/fgd: ξ_{k+1} = Π(ξ_k + α_k G)
    asgd/rasgd: z_{k+1} = Π(ξ_k + α_k G)，ξ_{k+1} = Π(z_{k+1} + γ_{k+1}(z_{k+1} - z_k))

    Returns:
        (ξ_{k+1}, 新动量状态, γ_{k+1})

    Raises:
        GradientError: 梯度含非有限值
    """
    g = grad.grad if isinstance(grad, GradientEstimate) else np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise GradientError(f"梯度含非有限值: {g}", grad=g)
    xi_k = np.asarray(xi_k, dtype=float)
    z_next = project(xi_k + alpha_k * g, lower, upper)
    if method not in ACCELERATED:
        return z_next, state, 0.0

    lam_next = lambda_next(state.lam, q)
    gamma = gamma_next(state.lam, lam_next)
    z_prev = xi_k if state.z_prev is None else state.z_prev
    if gamma == 0.0:
        xi_next = z_next
    else:
        xi_next = project(z_next + gamma * (z_next - z_prev), lower, upper)
    return xi_next, MomentumState(lam=lam_next, z_prev=z_next, restart_count=state.restart_count), gamma


def restart_check(
    grad: Union[GradientEstimate, np.ndarray],
    xi_k: np.ndarray,
    xi_prev: Optional[np.ndarray],
    criterion: str = "gradient",
    xi_prev2: Optional[np.ndarray] = None,
) -> bool:
    """
    判断是否重启动量

    gradient: G·(ξ_k - ξ_{k-1}) < 0（上升约定）
    speed:    ‖ξ_k - ξ_{k-1}‖ < ‖ξ_{k-1} - ξ_{k-2}‖
    always:   每次迭代都重启
    """
    if criterion == "always":
        return True
    if xi_prev is None:
        return False
    if criterion == "speed":
        if xi_prev2 is None:
            return False
        return bool(np.linalg.norm(xi_k - xi_prev) < np.linalg.norm(xi_prev - xi_prev2))
    g = grad.grad if isinstance(grad, GradientEstimate) else np.asarray(grad, dtype=float)
    return bool(float(g @ (np.asarray(xi_k) - np.asarray(xi_prev))) < 0.0)


def restart(state: MomentumState, z_current: np.ndarray) -> MomentumState:
    """λ 置1，z_prev 重新锚定在当前点"""
    return MomentumState(lam=1.0, z_prev=np.array(z_current, dtype=float), restart_count=state.restart_count + 1)


def sliding_average(xis: np.ndarray, alphas: Sequence[float], k: int) -> np.ndarray:
    """
    步长加权滑动平均，窗口 ⌈k/2⌉ <= i <= k

    Args:
        xis: 迭代点 (>= k+1, n)
        alphas: 对应步长
        k: 当前迭代序号
    """
    xis = np.asarray(xis, dtype=float)
    weights = np.asarray(alphas, dtype=float)[(k + 1) // 2:k + 1]
    window = xis[(k + 1) // 2:k + 1]
    return weights @ window / weights.sum()


def sgd_bound(alphas: Sequence[float], k: int, diameter: float, sigma: float, grad_norm: float) -> float:
    """
    SGD目标函数差距的理论上界（仅作诊断）

    (2 Σ α_i)^{-1} [D² + (σ² + ‖∇f‖²) Σ α_i²]，窗口同滑动平均
    """
    window = np.asarray(alphas, dtype=float)[(k + 1) // 2:k + 1]
    return float((diameter ** 2 + (sigma ** 2 + grad_norm ** 2) * np.sum(window ** 2)) / (2.0 * np.sum(window)))


def run(
    problem: BayesProblem,
    grad_config: GradientConfig,
    opt_config: OptimizerConfig,
    xi_0,
    rng: Union[RandomStreams, int, None] = None,
    target=None,
) -> OptimizerTrace:
    """
    运行优化循环

    在达到 max_iters、累计NCFM达到 max_ncfm，或提供target时 ‖ξ_k - target‖ <= tol 时停止。
    迭代k的梯度使用随机流 streams.child(k)。

    Args:
        problem: 贝叶斯问题
        grad_config: 梯度估计器配置
        opt_config: 优化器配置
        xi_0: 初始设计，必须位于盒约束内
        rng: 随机流或种子，默认使用 opt_config.seed
        target: 已知最优设计（基准模式）

    Returns:
        OptimizerTrace，梯度或模型错误时状态为 failed
    """
    model = problem.model
    lower, upper = model.lower, model.upper
    xi = model.check_design(xi_0)
    if np.any(xi < lower) or np.any(xi > upper):
        raise ConfigurationError(f"初始设计不在设计域内: {xi}", path="optimizer.xi0")
    target = None if target is None else model.check_design(target)
    streams = as_streams(opt_config.seed if rng is None else rng)
    method = opt_config.method

    trace = OptimizerTrace(method=method)
    trace.rows.append(TraceRow(k=0, xi=xi.copy(), xibar=xi.copy(), alpha=step_size(opt_config, 0)))
    state = MomentumState(z_prev=xi.copy())
    # 前缀和：滑动平均每步 O(1)
    cum_alpha = [0.0, trace.rows[0].alpha]
    cum_weighted = [np.zeros_like(xi), trace.rows[0].alpha * xi]
    xi_prev = xi_prev2 = None
    ncfm = 0
    k = 0

    logger.info(f"开始优化: {method} + {grad_config.kind}, ξ_0 = {xi}, α_0 = {opt_config.alpha0}")
    while True:
        if target is not None and np.linalg.norm(xi - target) <= opt_config.tol:
            trace.status = STATUS_CONVERGED
            break
        if k >= opt_config.max_iters:
            trace.status = STATUS_MAX_ITERS
            break
        if opt_config.max_ncfm is not None and ncfm >= opt_config.max_ncfm:
            trace.status = STATUS_BUDGET
            break

        alpha = step_size(opt_config, k)
        try:
            estimate = estimate_gradient(problem, xi, grad_config, streams.child(k))
            ncfm += estimate.ncfm
            restarted = False
            if method == "rasgd" and restart_check(estimate, xi, xi_prev, opt_config.restart, xi_prev2):
                state = restart(state, xi)
                restarted = True
            xi_next, state, gamma = step(method, state, xi, estimate, alpha, opt_config.q, lower, upper)
        except OEDError as e:
            trace.status = STATUS_FAILED
            trace.message = str(e)
            logger.error(f"第 {k} 次迭代失败: {e}")
            break

        xi_prev2, xi_prev, xi = xi_prev, xi, xi_next
        k += 1
        trace.rows.append(TraceRow(
            k=k,
            xi=xi.copy(),
            xibar=xi.copy(),
            alpha=step_size(opt_config, k),
            gamma=gamma,
            restart=restarted,
            grad_norm=estimate.norm,
            ncfm=ncfm,
        ))
        alpha_k = trace.rows[-1].alpha
        cum_alpha.append(cum_alpha[-1] + alpha_k)
        cum_weighted.append(cum_weighted[-1] + alpha_k * xi)
        lo = (k + 1) // 2
        trace.rows[-1].xibar = (cum_weighted[k + 1] - cum_weighted[lo]) / (cum_alpha[k + 1] - cum_alpha[lo])

        if opt_config.log_every and k % opt_config.log_every == 0:
            logger.debug(f"迭代 {k}: ξ = {xi}, |G| = {estimate.norm:.4g}, NCFM = {ncfm}")
            if opt_config.bound_diameter is not None and opt_config.bound_sigma is not None:
                bound = sgd_bound(trace.alphas, k, opt_config.bound_diameter, opt_config.bound_sigma, estimate.norm)
                logger.info(f"迭代 {k}: SGD目标差距上界 {bound:.4g}")

    trace.restarts = state.restart_count
    logger.info(
        f"优化结束: 状态 {trace.status}, 迭代 {trace.iterations}, NCFM {trace.ncfm}, "
        f"重启 {trace.restarts}, ξ = {trace.final_xi}"
    )
    return trace


def create_optimizer_config(method: str = "rasgd", **kwargs) -> OptimizerConfig:
    """创建优化器配置的便捷函数"""
    return OptimizerConfig(method=method, **kwargs)
