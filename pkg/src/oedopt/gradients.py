"""
EIG随机梯度模块

梯度估计器（上升方向）：
- sg_mc:     双层蒙特卡洛对数比值的设计有限差分
- sg_la:     拉普拉斯近似梯度 N_e Σ : Sym(∇_ξ∇_θg Σ_ε^{-1} ∇_θg)
- sg_mcis:   重要性采样版本，提议分布在基点设计上冻结
- sg_direct: 非OED随机目标的直接梯度 ∇_ξ g(ξ, θ)，θ ~ 先验

sg_mc/sg_mcis 使用路径式公共随机数：θ、ε 和内层样本在整个差分模板上冻结，
每个扰动设计点处重新生成 Y(ξ') = g(ξ', θ) + ε，分子残差恒为 ε。
批样本 b 的随机数来自生成器 streams.generator(b)。
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from .bayes import (
    BayesProblem,
    NelderMeadConfig,
    ObservationSet,
    fit_from_precision,
    gauss_newton_precision,
    laplace_logpdf_many,
    log_likelihood_many,
    log_likelihood_residuals,
    sample_laplace,
)
from .errors import ConfigurationError, GradientError, SingularFitError
from .estimators import MAX_REJECTIONS, PROPOSALS, fit_proposal, log_mean_exp
from .models import FDScheme, derivative_grid, fd_combine, fd_stencil, jac_xi
from .sampling import RandomStreams, as_streams, map_indexed

logger = logging.getLogger(__name__)

GRADIENT_KINDS = ("sg_mc", "sg_la", "sg_mcis", "sg_direct")


@dataclass
class GradientConfig:
    """梯度估计器配置"""
    kind: str = "sg_la"
    batch: int = 1
    m_inner: int = 100
    fd_scheme: FDScheme = field(default_factory=FDScheme)
    proposal: str = "laplace"
    nelder_mead: NelderMeadConfig = field(default_factory=NelderMeadConfig)
    analytic: bool = False
    workers: int = 1
    keep_samples: bool = False
    max_rejections: int = MAX_REJECTIONS

    def __post_init__(self):
        """验证配置"""
        if self.kind not in GRADIENT_KINDS:
            raise ConfigurationError(f"未知的梯度估计器: {self.kind}", path="gradient.kind")
        if self.batch < 1:
            raise ConfigurationError(f"批大小必须 >= 1: {self.batch}", path="gradient.batch")
        if self.m_inner < 1:
            raise ConfigurationError(f"内层样本数必须 >= 1: {self.m_inner}", path="gradient.m_inner")
        if self.proposal not in PROPOSALS:
            raise ConfigurationError(f"未知的提议分布: {self.proposal}", path="gradient.proposal")


@dataclass
class GradientEstimate:
    """梯度估计结果"""
    grad: np.ndarray
    ncfm: int
    kind: str = ""
    per_sample: Optional[np.ndarray] = field(default=None, repr=False)
    numerators: Optional[List[np.ndarray]] = field(default=None, repr=False)
    fallbacks: int = 0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.grad))


@dataclass
class _SampleGradient:
    grad: np.ndarray
    cost: int
    numerators: Optional[np.ndarray] = None
    fallback: bool = False


def _stencil_outputs(problem: BayesProblem, points: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.array([problem.model.evaluate(point, theta) for point in points])


def _log_ratio_gradient(problem, points, steps, scheme, outputs, eps, inner, log_correction):
    """
    在冻结的 (θ, ε, 内层样本) 下对 log[p(Y|θ) / 证据] 做设计差分

    Returns:
        (梯度, 各模板点上的分子)
    """
    values = np.empty(len(points))
    numerators = np.empty(len(points))
    for p, (point, g) in enumerate(zip(points, outputs)):
        Y = ObservationSet(y=g + eps)
        # 在每个模板点上按 Y(ξ') - g(ξ', θ) 重新计算分子
        numerators[p] = float(log_likelihood_residuals(problem, Y.y - g))
        log_w = log_likelihood_many(problem, Y, point, inner) + log_correction
        values[p] = numerators[p] - log_mean_exp(log_w)
    return fd_combine(values, steps, scheme), numerators


def _sg_mc_sample(problem: BayesProblem, xi, config: GradientConfig, gen: np.random.Generator) -> _SampleGradient:
    theta = problem.prior.sample(gen)
    eps = problem.noise.sample(gen, problem.n_exp)
    inner = problem.prior.sample(gen, config.m_inner)
    points, steps = fd_stencil(xi, config.fd_scheme)
    outputs = _stencil_outputs(problem, points, theta)
    grad, numerators = _log_ratio_gradient(problem, points, steps, config.fd_scheme, outputs, eps, inner, 0.0)
    cost = len(points) * (1 + config.m_inner)
    return _SampleGradient(grad=grad, cost=cost, numerators=numerators)


def _sg_mcis_sample(problem: BayesProblem, xi, config: GradientConfig, gen: np.random.Generator) -> _SampleGradient:
    theta = problem.prior.sample(gen)
    eps = problem.noise.sample(gen, problem.n_exp)
    points, steps = fd_stencil(xi, config.fd_scheme)
    outputs = _stencil_outputs(problem, points, theta)
    cost = len(points)

    fit, fallback = None, False
    if config.proposal == "laplace":
        if config.fd_scheme.is_central:
            g_base = problem.model.evaluate(xi, theta)
            cost += 1
        else:
            g_base = outputs[0]
        Y = ObservationSet(y=g_base + eps)
        fit, fit_cost, fallback = fit_proposal(problem, Y, xi, config.fd_scheme, config.nelder_mead)
        cost += fit_cost
        if fallback:
            logger.warning(f"sg_mcis 提议分布拟合失败，回退到先验: xi={xi}")

    if fit is not None:
        inner = sample_laplace(fit, gen, config.m_inner)
        log_correction = problem.prior.logpdf_many(inner) - laplace_logpdf_many(fit, inner)
    else:
        inner = problem.prior.sample(gen, config.m_inner)
        log_correction = 0.0

    grad, numerators = _log_ratio_gradient(
        problem, points, steps, config.fd_scheme, outputs, eps, inner, log_correction
    )
    cost += len(points) * config.m_inner
    return _SampleGradient(grad=grad, cost=cost, numerators=numerators, fallback=fallback)


def la_gradient(problem: BayesProblem, xi, theta, scheme: FDScheme):
    """
    固定theta处的拉普拉斯梯度 N_e Σ : Sym(∇_ξ∇_θg Σ_ε^{-1} ∇_θg)

    即MCLA被积函数 -½ logdet(2πΣ(ξ, θ)) 对设计的梯度。

    Returns:
        (梯度 (dim_xi,), 消耗的模型调用次数)

    Raises:
        SingularFitError: 精度矩阵非正定
    """
    grid = derivative_grid(problem.model, xi, theta, scheme)
    return _grid_gradient(problem, grid, theta), grid.cost


def _grid_gradient(problem: BayesProblem, grid, theta) -> np.ndarray:
    prec = gauss_newton_precision(problem, grid.jac_theta, theta)
    fit = fit_from_precision(np.asarray(theta, dtype=float), prec, fit_cost=grid.cost)
    W = problem.noise.precision
    grad = np.empty(problem.model.dim_xi)
    for s in range(problem.model.dim_xi):
        A = grid.cross[:, s, :].T @ W @ grid.jac_theta
        grad[s] = problem.n_exp * float(np.sum(fit.cov * 0.5 * (A + A.T)))
    return grad


def _sg_la_sample(problem: BayesProblem, xi, config: GradientConfig, gen: np.random.Generator) -> _SampleGradient:
    cost = 0
    for attempt in range(config.max_rejections + 1):
        theta = problem.prior.sample(gen)
        grid = derivative_grid(problem.model, xi, theta, config.fd_scheme)
        cost += grid.cost
        try:
            grad = _grid_gradient(problem, grid, theta)
        except SingularFitError:
            logger.warning(f"sg_la 拉普拉斯拟合奇异，重抽（第 {attempt + 1} 次）")
            continue
        return _SampleGradient(grad=grad, cost=cost)
    raise SingularFitError(f"sg_la 连续 {config.max_rejections} 次拟合奇异: xi={xi}")


def _sg_direct_sample(problem: BayesProblem, xi, config: GradientConfig, gen: np.random.Generator) -> _SampleGradient:
    model = problem.model
    theta = problem.prior.sample(gen)
    if config.analytic:
        return _SampleGradient(grad=model.gradient_xi(xi, theta)[0], cost=1)
    scheme = config.fd_scheme
    return _SampleGradient(grad=jac_xi(model, xi, theta, scheme)[0], cost=scheme.stencil_size(model.dim_xi))


SAMPLERS = {
    "sg_mc": _sg_mc_sample,
    "sg_la": _sg_la_sample,
    "sg_mcis": _sg_mcis_sample,
    "sg_direct": _sg_direct_sample,
}


def estimate_gradient(
    problem: BayesProblem,
    xi,
    config: GradientConfig,
    rng: Union[RandomStreams, int, None] = None,
) -> GradientEstimate:
    """
    按配置求批平均的随机梯度

    Args:
        problem: 贝叶斯问题
        xi: 设计点
        config: 梯度配置，batch 个独立样本取平均
        rng: 随机流或种子，样本 b 使用 generator(b)

    Returns:
        GradientEstimate

    Raises:
        ConfigurationError: 估计器与问题不匹配
        GradientError: 梯度含非有限值
    """
    model = problem.model
    xi = model.check_design(xi)
    if config.kind == "sg_direct":
        if model.r != 1:
            raise ConfigurationError(f"sg_direct 要求标量输出: r={model.r}", path="gradient.kind")
        if config.analytic and not model.has_analytic_gradient:
            raise ConfigurationError(f"模型 {model.name} 不提供解析梯度", path="gradient.analytic")
    elif problem.prior.kind == "fixed":
        raise ConfigurationError(f"{config.kind} 需要具有密度的先验", path="prior.kind")

    streams = as_streams(rng)
    sampler = SAMPLERS[config.kind]
    samples = map_indexed(lambda b: sampler(problem, xi, config, streams.generator(b)), config.batch, config.workers)

    per_sample = np.array([s.grad for s in samples], dtype=float).reshape(config.batch, model.dim_xi)
    grad = per_sample.mean(axis=0)
    ncfm = int(sum(s.cost for s in samples))
    if not np.all(np.isfinite(grad)):
        raise GradientError(f"{config.kind} 梯度含非有限值: xi={xi}, grad={grad}", grad=grad)

    estimate = GradientEstimate(
        grad=grad,
        ncfm=ncfm,
        kind=config.kind,
        per_sample=per_sample if config.keep_samples else None,
        numerators=[s.numerators for s in samples] if config.keep_samples else None,
        fallbacks=sum(1 for s in samples if s.fallback),
    )
    logger.debug(f"{config.kind} 梯度: |G| = {estimate.norm:.4g}, NCFM = {ncfm}, B = {config.batch}")
    return estimate


def sg_mc(problem: BayesProblem, xi, config: GradientConfig, rng=None) -> GradientEstimate:
    """双层蒙特卡洛随机梯度，成本 B(dim_xi+1)M + B(dim_xi+1)"""
    return estimate_gradient(problem, xi, replace(config, kind="sg_mc"), rng)


def sg_la(problem: BayesProblem, xi, config: GradientConfig, rng=None) -> GradientEstimate:
    """拉普拉斯随机梯度，成本 B(dim_xi+1)(d+1)"""
    return estimate_gradient(problem, xi, replace(config, kind="sg_la"), rng)


def sg_mcis(problem: BayesProblem, xi, config: GradientConfig, rng=None) -> GradientEstimate:
    """重要性采样随机梯度，每样本成本 (d+1+C_MAP) + (dim_xi+1)M + (dim_xi+1)"""
    return estimate_gradient(problem, xi, replace(config, kind="sg_mcis"), rng)


def sg_direct(problem: BayesProblem, xi, config: GradientConfig, rng=None) -> GradientEstimate:
    """直接随机梯度，解析梯度每样本记一次调用，否则 dim_xi+1 次"""
    return estimate_gradient(problem, xi, replace(config, kind="sg_direct"), rng)


def full_gradient(
    problem: BayesProblem,
    xi,
    kind: str,
    N: int,
    M: int = 1,
    rng: Union[RandomStreams, int, None] = None,
    base: Optional[GradientConfig] = None,
) -> GradientEstimate:
    """全梯度：批大小取 N 的样本平均，用于FGD"""
    if N < 1:
        raise ConfigurationError(f"全梯度样本数必须 >= 1: {N}", path="gradient.batch")
    config = replace(base or GradientConfig(), kind=kind, batch=N, m_inner=M)
    return estimate_gradient(problem, xi, config, rng)


def logdet_gradient_trace(cov: np.ndarray, dcov: np.ndarray) -> np.ndarray:
    """
    -½ Σ^{-1} : ∂_s Σ

    Args:
        cov: 协方差 (d, d)
        dcov: 各设计坐标上的协方差导数 (dim_xi, d, d)

    Returns:
        (dim_xi,)
    """
    cov_inv = np.linalg.inv(cov)
    return np.array([-0.5 * float(np.sum(cov_inv * d_s.T)) for d_s in np.asarray(dcov, dtype=float)])


def logdet_gradient_eigen(cov: np.ndarray, dcov: np.ndarray) -> np.ndarray:
    """
    -Σ_k ∂_s σ_k / σ_k，σ_k 为协方差特征值的平方根（后验标准差）

    特征值导数 ∂λ_k = v_k^T ∂Σ v_k，要求特征值互不相同。
    """
    eigvals, eigvecs = np.linalg.eigh(cov)
    sigma = np.sqrt(eigvals)
    result = []
    for d_s in np.asarray(dcov, dtype=float):
        d_lambda = np.einsum("ik,ij,jk->k", eigvecs, d_s, eigvecs)
        d_sigma = d_lambda / (2.0 * sigma)
        result.append(-float(np.sum(d_sigma / sigma)))
    return np.array(result)
