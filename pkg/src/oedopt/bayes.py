"""
贝叶斯推断模块

负责先验、高斯噪声、合成数据、对数似然以及拉普拉斯近似
（Nelder-Mead求MAP、Gauss-Newton后验协方差、拉普拉斯高斯的采样与密度）。
所有似然运算都在对数空间完成。
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from .errors import BoundaryError, ConfigurationError, SingularFitError
from .models import FDScheme, ForwardModel, jac_theta

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
PRIOR_KINDS = ("gaussian", "uniform", "fixed")


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{what}不是对称正定矩阵: {matrix.tolist()}")


@dataclass
class Prior:
    """
    参数先验

    kind:
        gaussian - 均值mean、协方差cov
        uniform  - 逐坐标区间 [lo, hi]
        fixed    - 点质量value（确定性极限，无密度）
    """
    kind: str
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None
    _chol: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _logdet: float = field(default=0.0, init=False, repr=False)
    _precision: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        """验证并预计算分解"""
        if self.kind not in PRIOR_KINDS:
            raise ConfigurationError(f"未知的先验类型: {self.kind}", path="prior.kind")
        if self.kind == "gaussian":
            self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
            self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if self.cov.shape != (self.mean.size, self.mean.size):
                raise ConfigurationError(f"先验协方差形状不匹配: {self.cov.shape}", path="prior.cov")
            if not np.allclose(self.cov, self.cov.T):
                raise ConfigurationError("先验协方差不对称", path="prior.cov")
            self._chol = _cholesky(self.cov, "先验协方差")
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
            self._precision = linalg.cho_solve((self._chol, True), np.eye(self.mean.size))
        elif self.kind == "uniform":
            self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
            self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
            if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
                raise ConfigurationError("均匀先验必须逐坐标满足 lo < hi", path="prior")
            self._logdet = float(np.sum(np.log(self.hi - self.lo)))
        else:
            self.value = np.asarray(self.value, dtype=float).reshape(-1)

    @classmethod
    def gaussian(cls, mean: Sequence[float], cov=None, std=None) -> "Prior":
        """由协方差或逐坐标标准差构造高斯先验"""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        if cov is None:
            cov = np.diag(np.asarray(std, dtype=float).reshape(-1) ** 2)
        return cls(kind="gaussian", mean=mean, cov=cov)

    @classmethod
    def uniform(cls, lo: Sequence[float], hi: Sequence[float]) -> "Prior":
        return cls(kind="uniform", lo=lo, hi=hi)

    @classmethod
    def fixed(cls, value: Sequence[float]) -> "Prior":
        return cls(kind="fixed", value=value)

    @property
    def d(self) -> int:
        return int(self.center.size)

    @property
    def center(self) -> np.ndarray:
        """先验中心：高斯均值、均匀区间中点或固定值"""
        if self.kind == "gaussian":
            return self.mean
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        return self.value

    @property
    def scale(self) -> np.ndarray:
        """逐坐标尺度：高斯标准差、均匀区间宽度"""
        if self.kind == "gaussian":
            return np.sqrt(np.diag(self.cov))
        if self.kind == "uniform":
            return self.hi - self.lo
        return np.zeros_like(self.value)

    def _require_density(self) -> None:
        if self.kind == "fixed":
            raise ConfigurationError("固定先验没有密度", path="prior.kind")

    def logpdf_many(self, thetas: np.ndarray) -> np.ndarray:
        """批量对数密度，均匀先验支撑外为 -inf"""
        self._require_density()
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.d)
        if self.kind == "gaussian":
            white = linalg.solve_triangular(self._chol, (thetas - self.mean).T, lower=True)
            return -0.5 * (self.d * LOG_2PI + self._logdet) - 0.5 * np.sum(white ** 2, axis=0)
        inside = np.all((thetas >= self.lo) & (thetas <= self.hi), axis=1)
        return np.where(inside, -self._logdet, -np.inf)

    def logpdf(self, theta) -> float:
        return float(self.logpdf_many(theta)[0])

    def sample(self, gen: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """从先验抽样，size为None时返回单个向量，否则返回 (size, d)"""
        shape = (self.d,) if size is None else (size, self.d)
        if self.kind == "gaussian":
            return gen.standard_normal(shape) @ self._chol.T + self.mean
        if self.kind == "uniform":
            return self.lo + (self.hi - self.lo) * gen.random(shape)
        return np.broadcast_to(self.value, shape).copy()

    def neg_log_hessian(self, theta) -> np.ndarray:
        """-∇∇ log π(theta)：高斯为 Σ_pr^{-1}，均匀先验内部为零矩阵"""
        self._require_density()
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if self.kind == "gaussian":
            return self._precision.copy()
        if np.any(theta <= self.lo) or np.any(theta >= self.hi):
            raise BoundaryError(f"均匀先验在支撑边界或外部没有Hessian: theta={theta}")
        return np.zeros((self.d, self.d))


@dataclass
class NoiseModel:
    """加性高斯噪声 N(0, Σ_ε)，预计算Cholesky因子与对数行列式"""
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    chol_inv: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape[0] != self.cov.shape[1] or not np.allclose(self.cov, self.cov.T):
            raise ConfigurationError("噪声协方差必须为对称方阵", path="noise.cov")
        self.chol = _cholesky(self.cov, "噪声协方差")
        self.chol_inv = linalg.solve_triangular(self.chol, np.eye(self.r), lower=True)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @classmethod
    def from_std(cls, std: Sequence[float]) -> "NoiseModel":
        return cls(cov=np.diag(np.asarray(std, dtype=float).reshape(-1) ** 2))

    @property
    def r(self) -> int:
        return self.cov.shape[0]

    @property
    def precision(self) -> np.ndarray:
        return self.chol_inv.T @ self.chol_inv

    def sample(self, gen: np.random.Generator, n_exp: int) -> np.ndarray:
        """抽取 n_exp 个独立噪声向量，形状 (n_exp, r)"""
        return gen.standard_normal((n_exp, self.r)) @ self.chol.T

    def log_norm(self, n_exp: int) -> float:
        """-(N_e/2) logdet(2π Σ_ε)"""
        return -0.5 * n_exp * (self.r * LOG_2PI + self.logdet)


@dataclass
class ObservationSet:
    """观测数据 Y，形状 (N_e, r)"""
    y: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))

    @property
    def n_exp(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class LaplaceFit:
    """拉普拉斯近似：MAP点、后验协方差及其逆与对数行列式"""
    theta_hat: np.ndarray
    cov: np.ndarray
    prec: np.ndarray
    logdet_cov: float
    map_cost: int = 0
    fit_cost: int = 0
    converged: bool = True
    prec_chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return int(self.theta_hat.size)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass
class BayesProblem:
    """正向模型、先验、噪声与重复实验次数的组合"""
    model: ForwardModel
    prior: Prior
    noise: NoiseModel
    n_exp: int = 1

    def __post_init__(self):
        """维度一致性检查"""
        if self.n_exp < 1:
            raise ConfigurationError(f"重复实验次数必须 >= 1: {self.n_exp}", path="n_exp")
        if self.prior.d != self.model.d:
            raise ConfigurationError(f"先验维度 {self.prior.d} 与模型参数维度 {self.model.d} 不一致", path="prior")
        if self.noise.r != self.model.r:
            raise ConfigurationError(f"噪声维度 {self.noise.r} 与模型输出维度 {self.model.r} 不一致", path="noise")

    @property
    def d(self) -> int:
        return self.model.d


@dataclass
class NelderMeadConfig:
    """
    MAP求解的Nelder-Mead设置

    反射/扩张/收缩/收缩全体系数固定为 1.0/2.0/0.5/0.5（scipy非自适应默认值）。
    """
    initial_offset: float = 0.05
    ftol: float = 1e-10
    max_iter_per_dim: int = 200


@dataclass
class MapEstimate:
    """MAP求解结果"""
    theta_hat: np.ndarray
    map_cost: int
    converged: bool
    objective: float


def simulate(problem: BayesProblem, xi, theta, gen: np.random.Generator):
    """
    计算一次 g(xi, theta) 并抽取 N_e 个噪声向量

    Returns:
        (g, eps)：g 形状 (r,)，eps 形状 (N_e, r)
    """
    g = problem.model.evaluate(xi, theta)
    eps = problem.noise.sample(gen, problem.n_exp)
    return g, eps


def synthesize_data(problem: BayesProblem, xi, theta_t, rng: np.random.Generator) -> ObservationSet:
    """
    合成数据 y_i = g(xi, theta_t) + ε_i，i = 1..N_e

    g 只计算一次并在所有重复实验间共享。
    """
    g, eps = simulate(problem, xi, theta_t, rng)
    return ObservationSet(y=g + eps)


def log_likelihood_residuals(problem: BayesProblem, residuals: np.ndarray) -> np.ndarray:
    """
    由残差直接计算对数似然

    Args:
        residuals: 形状 (..., N_e, r)

    Returns:
        形状 (...) 的对数似然
    """
    white = residuals @ problem.noise.chol_inv.T
    return problem.noise.log_norm(residuals.shape[-2]) - 0.5 * np.sum(white ** 2, axis=(-2, -1))


def log_likelihood(problem: BayesProblem, Y: ObservationSet, xi, theta) -> float:
    """log p(Y | theta, xi)，消耗一次模型调用"""
    g = problem.model.evaluate(xi, theta)
    return float(log_likelihood_residuals(problem, Y.y - g))


def log_likelihood_many(problem: BayesProblem, Y: ObservationSet, xi, thetas) -> np.ndarray:
    """批量对数似然，消耗 len(thetas) 次模型调用"""
    outputs = problem.model.evaluate_many(xi, thetas)
    return log_likelihood_residuals(problem, Y.y[None, :, :] - outputs[:, None, :])


def prior_logpdf(prior: Prior, theta) -> float:
    return prior.logpdf(theta)


def sample_prior(prior: Prior, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    return prior.sample(rng, size)


def neg_log_prior_hessian(prior: Prior, theta) -> np.ndarray:
    return prior.neg_log_hessian(theta)


def map_estimate(
    problem: BayesProblem,
    Y: ObservationSet,
    xi,
    nm_config: Optional[NelderMeadConfig] = None,
) -> MapEstimate:
    """
    用Nelder-Mead最小化 ½Σ‖y_i - g‖²_{Σ_ε^{-1}} - log π(theta)

    初始单纯形位于先验中心，逐坐标偏移先验尺度的5%；目标函数值的
    单纯形跨度小于 ftol·(1+|best|) 或迭代达到 200·d 次时停止。
    均匀先验时搜索被限制在向内收缩 1e-9·区间宽度 的开区间内。

    Returns:
        MapEstimate，map_cost 为消耗的模型调用次数
    """
    nm_config = nm_config or NelderMeadConfig()
    prior = problem.prior
    if prior.kind == "fixed":
        raise ConfigurationError("固定先验无法求MAP", path="prior.kind")

    d = problem.d
    Y_obs = Y.y
    calls = 0

    def objective(theta: np.ndarray) -> float:
        nonlocal calls
        calls += 1
        g = problem.model.evaluate(xi, theta)
        white = (Y_obs - g) @ problem.noise.chol_inv.T
        return 0.5 * float(np.sum(white ** 2)) - prior.logpdf(theta)

    x0 = prior.center.copy()
    simplex = np.vstack([x0, x0 + np.diag(nm_config.initial_offset * prior.scale)])
    bounds = None
    if prior.kind == "uniform":
        shrink = 1e-9 * (prior.hi - prior.lo)
        bounds = list(zip(prior.lo + shrink, prior.hi - shrink))

    # 初始顶点的目标值缓存，避免scipy重复计算时多计调用
    cache = {vertex.tobytes(): objective(vertex) for vertex in simplex}

    def cached_objective(theta: np.ndarray) -> float:
        key = np.asarray(theta, dtype=float).tobytes()
        if key in cache:
            return cache.pop(key)
        return objective(theta)

    fatol = nm_config.ftol * (1.0 + min(abs(v) for v in cache.values()))
    result = minimize(
        cached_objective,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "initial_simplex": simplex,
            "xatol": np.inf,
            "fatol": fatol,
            "maxiter": nm_config.max_iter_per_dim * d,
            "adaptive": False,
        },
    )
    if not result.success:
        logger.warning(f"Nelder-Mead未在迭代上限内收敛: {result.message}")
    return MapEstimate(
        theta_hat=np.asarray(result.x, dtype=float),
        map_cost=calls,
        converged=bool(result.success),
        objective=float(result.fun),
    )


def fit_from_precision(
    theta_hat: np.ndarray,
    prec: np.ndarray,
    map_cost: int = 0,
    fit_cost: int = 0,
    converged: bool = True,
) -> LaplaceFit:
    """
    由精度矩阵构造拉普拉斯拟合

    Cholesky失败时加一次 1e-10·trace(prec)/d·I 的抖动；仍失败则抛出 SingularFitError。
    """
    d = prec.shape[0]
    prec = 0.5 * (prec + prec.T)
    if not np.all(np.isfinite(prec)):
        raise SingularFitError(f"精度矩阵含非有限值: theta={theta_hat}")
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * float(np.trace(prec)) / d
        logger.warning(f"精度矩阵非正定，添加抖动 {jitter:.3e}: theta={theta_hat}")
        prec = prec + jitter * np.eye(d)
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise SingularFitError(f"添加抖动后精度矩阵仍非正定: theta={theta_hat}")
    cov = linalg.cho_solve((chol, True), np.eye(d))
    logdet_cov = -2.0 * float(np.sum(np.log(np.diag(chol))))
    return LaplaceFit(
        theta_hat=np.asarray(theta_hat, dtype=float).copy(),
        cov=cov,
        prec=prec,
        logdet_cov=logdet_cov,
        map_cost=map_cost,
        fit_cost=fit_cost,
        converged=converged,
        prec_chol=chol,
    )


def gauss_newton_precision(problem: BayesProblem, jac: np.ndarray, theta) -> np.ndarray:
    """N_e ∇g^T Σ_ε^{-1} ∇g + (-∇∇ log π)"""
    white = problem.noise.chol_inv @ jac
    return problem.n_exp * white.T @ white + problem.prior.neg_log_hessian(theta)


def laplace_covariance(
    problem: BayesProblem,
    xi,
    theta_hat,
    scheme: Optional[FDScheme] = None,
    map_cost: int = 0,
    converged: bool = True,
) -> LaplaceFit:
    """
    Gauss-Newton形式的拉普拉斯后验协方差

    精度 = N_e ∇_θg Σ_ε^{-1} ∇_θg + 先验Hessian，协方差由Cholesky求逆；
    前向差分消耗 d+1 次模型调用。
    """
    scheme = scheme or FDScheme()
    theta_hat = problem.model.check_params(theta_hat)
    jac = jac_theta(problem.model, xi, theta_hat, scheme)
    prec = gauss_newton_precision(problem, jac, theta_hat)
    return fit_from_precision(
        theta_hat,
        prec,
        map_cost=map_cost,
        fit_cost=scheme.stencil_size(problem.d),
        converged=converged,
    )


def laplace_logpdf_many(fit: LaplaceFit, thetas) -> np.ndarray:
    """N(theta_hat, Σ) 的批量对数密度"""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, fit.d)
    white = (thetas - fit.theta_hat) @ fit.prec_chol
    return -0.5 * (fit.d * LOG_2PI + fit.logdet_cov) - 0.5 * np.sum(white ** 2, axis=1)


def laplace_logpdf(fit: LaplaceFit, theta) -> float:
    return float(laplace_logpdf_many(fit, theta)[0])


def sample_laplace(fit: LaplaceFit, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """从 N(theta_hat, Σ) 抽样"""
    shape = (fit.d,) if size is None else (size, fit.d)
    z = rng.standard_normal(shape)
    # Σ = (L L^T)^{-1}，故 theta = theta_hat + L^{-T} z
    offsets = linalg.solve_triangular(fit.prec_chol.T, np.atleast_2d(z).T, lower=False).T
    return fit.theta_hat + offsets.reshape(shape)


def posterior_std(problem: BayesProblem, xi, theta=None, scheme: Optional[FDScheme] = None) -> np.ndarray:
    """在theta（默认先验中心）处拉普拉斯后验的逐坐标标准差"""
    theta = problem.prior.center if theta is None else theta
    return laplace_covariance(problem, xi, theta, scheme).std


def create_problem(
    model: ForwardModel,
    prior: Prior,
    noise: NoiseModel,
    n_exp: int = 1,
) -> BayesProblem:
    """创建贝叶斯问题的便捷函数"""
    problem = BayesProblem(model=model, prior=prior, noise=noise, n_exp=n_exp)
    logger.debug(f"创建贝叶斯问题: {model!r}, 先验 {prior.kind}, N_e={n_exp}")
    return problem
