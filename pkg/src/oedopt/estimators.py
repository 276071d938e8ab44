"""
期望信息增益估计模块

实现三种EIG估计器：
- dlmc:   双层蒙特卡洛，内层对证据做log-sum-exp平均
- mcla:   拉普拉斯近似蒙特卡洛，消去内层循环
- dlmcis: 以拉普拉斯后验为重要性采样提议分布的双层蒙特卡洛

每个外层样本使用由 (种子, 估计器标签, 样本索引) 派生的独立随机流，
结果与工作线程数无关。模型调用次数逐样本记账。
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp

from .bayes import (
    BayesProblem,
    NelderMeadConfig,
    ObservationSet,
    laplace_covariance,
    laplace_logpdf_many,
    log_likelihood_many,
    log_likelihood_residuals,
    map_estimate,
    sample_laplace,
    simulate,
)
from .errors import BoundaryError, ConfigurationError, SingularFitError
from .models import FDScheme, LinearGaussianModel
from .sampling import RandomStreams, as_streams, map_indexed

logger = logging.getLogger(__name__)

ESTIMATOR_KINDS = ("dlmc", "mcla", "dlmcis")
PROPOSALS = ("laplace", "prior")
MAX_REJECTIONS = 10


@dataclass
class EstimatorConfig:
    """EIG估计器配置"""
    kind: str = "mcla"
    n_outer: int = 1000
    m_inner: int = 100
    fd_scheme: FDScheme = field(default_factory=FDScheme)
    proposal: str = "laplace"
    nelder_mead: NelderMeadConfig = field(default_factory=NelderMeadConfig)
    workers: int = 1
    max_rejections: int = MAX_REJECTIONS
    # 外层随机流标签，缺省为估计器类型；标签相同的估计器共享外层 (theta, Y)
    stream_tag: Optional[str] = None

    def __post_init__(self):
        """验证配置"""
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"未知的估计器类型: {self.kind}", path="estimator.kind")
        if self.n_outer < 1:
            raise ConfigurationError(f"外层样本数必须 >= 1: {self.n_outer}", path="estimator.n_outer")
        if self.m_inner < 1:
            raise ConfigurationError(f"内层样本数必须 >= 1: {self.m_inner}", path="estimator.m_inner")
        if self.proposal not in PROPOSALS:
            raise ConfigurationError(f"未知的提议分布: {self.proposal}", path="estimator.proposal")


@dataclass
class EIGEstimate:
    """EIG估计结果（单位nats）"""
    value: float
    std_error: float
    ncfm: int
    kind: str = ""
    n_outer: int = 0
    m_inner: int = 0
    fallbacks: int = 0
    rejections: int = 0
    summands: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": float(self.value),
            "std_error": float(self.std_error),
            "ncfm": int(self.ncfm),
            "n_outer": int(self.n_outer),
            "m_inner": int(self.m_inner),
            "fallbacks": int(self.fallbacks),
            "rejections": int(self.rejections),
        }


@dataclass
class _OuterSample:
    summand: float
    cost: int
    fallback: bool = False
    rejections: int = 0


def log_mean_exp(values: np.ndarray) -> float:
    """log((1/M) Σ exp(v_m))，在对数空间计算"""
    values = np.asarray(values, dtype=float)
    return float(logsumexp(values) - np.log(values.size))


def _summarize(kind: str, config: EstimatorConfig, samples) -> EIGEstimate:
    summands = np.array([s.summand for s in samples], dtype=float)
    n = summands.size
    std_error = float(np.std(summands, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EIGEstimate(
        value=float(np.mean(summands)),
        std_error=std_error,
        ncfm=int(sum(s.cost for s in samples)),
        kind=kind,
        n_outer=n,
        m_inner=0 if kind == "mcla" else config.m_inner,
        fallbacks=sum(1 for s in samples if s.fallback),
        rejections=sum(s.rejections for s in samples),
        summands=summands,
    )


def _run(kind: str, sample_fn, config: EstimatorConfig, problem: BayesProblem) -> EIGEstimate:
    counter_before = problem.model.eval_counter
    samples = map_indexed(sample_fn, config.n_outer, config.workers)
    estimate = _summarize(kind, config, samples)
    logger.debug(f"{kind} 计数器增量 {problem.model.eval_counter - counter_before}, 记账 {estimate.ncfm}")
    logger.info(
        f"{kind} 估计完成: I = {estimate.value:.6g} ± {estimate.std_error:.3g}, "
        f"NCFM = {estimate.ncfm}, N = {config.n_outer}"
    )
    if estimate.fallbacks:
        logger.warning(f"{kind} 有 {estimate.fallbacks} 个外层样本回退到先验提议分布")
    return estimate


def eig_dlmc(
    problem: BayesProblem,
    xi,
    config: EstimatorConfig,
    rng: Union[RandomStreams, int, None] = None,
) -> EIGEstimate:
    """
    双层蒙特卡洛估计

    每个外层样本：theta_n ~ 先验，Y_n 合成；内层 M 个 theta* ~ 先验（每个n重新抽取），
    证据以 log-sum-exp 平均。成本 N(1+M)。
    """
    xi = problem.model.check_design(xi)
    streams = as_streams(rng).child(config.stream_tag or "dlmc")
    prior = problem.prior
    M = config.m_inner

    def outer(n: int) -> _OuterSample:
        gen = streams.generator(n)
        theta = prior.sample(gen)
        g, eps = simulate(problem, xi, theta, gen)
        y = g + eps
        numerator = float(log_likelihood_residuals(problem, y - g))
        inner = prior.sample(gen, M)
        log_p = log_likelihood_many(problem, ObservationSet(y=y), xi, inner)
        return _OuterSample(summand=numerator - log_mean_exp(log_p), cost=1 + M)

    return _run("dlmc", outer, config, problem)


def mcla_summand(problem: BayesProblem, log_det_cov: float, theta) -> float:
    """-½ logdet(2πΣ) - d/2 - log π(theta)"""
    d = problem.d
    return -0.5 * (d * np.log(2.0 * np.pi) + log_det_cov) - 0.5 * d - problem.prior.logpdf(theta)


def eig_mcla(
    problem: BayesProblem,
    xi,
    config: EstimatorConfig,
    rng: Union[RandomStreams, int, None] = None,
) -> EIGEstimate:
    """
    拉普拉斯近似蒙特卡洛估计

    theta_n ~ 先验，在theta_n处做拉普拉斯协方差拟合（以theta_n近似MAP）。
    奇异拟合的样本被拒绝并重抽，每个槽位最多 max_rejections 次。成本 N(d+1)。

    Raises:
        SingularFitError: 某个槽位连续拒绝次数超过上限
    """
    xi = problem.model.check_design(xi)
    if problem.prior.kind == "fixed":
        raise ConfigurationError("mcla需要具有密度的先验", path="prior.kind")
    streams = as_streams(rng).child(config.stream_tag or "mcla")
    fit_cost = config.fd_scheme.stencil_size(problem.d)

    def outer(n: int) -> _OuterSample:
        gen = streams.generator(n)
        cost = 0
        for attempt in range(config.max_rejections + 1):
            theta = problem.prior.sample(gen)
            cost += fit_cost
            try:
                fit = laplace_covariance(problem, xi, theta, config.fd_scheme)
            except SingularFitError:
                logger.warning(f"mcla 样本 {n} 拉普拉斯拟合奇异，重抽（第 {attempt + 1} 次）")
                continue
            summand = mcla_summand(problem, fit.logdet_cov, theta)
            return _OuterSample(summand=summand, cost=cost, rejections=attempt)
        raise SingularFitError(f"mcla 样本 {n} 连续 {config.max_rejections} 次拟合奇异: xi={xi}")

    return _run("mcla", outer, config, problem)


def eig_dlmcis(
    problem: BayesProblem,
    xi,
    config: EstimatorConfig,
    rng: Union[RandomStreams, int, None] = None,
) -> EIGEstimate:
    """
    拉普拉斯重要性采样的双层蒙特卡洛估计

    每个外层样本求一次MAP并拟合一次协方差，内层 theta* ~ N(theta_hat, Σ)，
    权重 log p + log π - log π_LA。MAP不收敛或拟合失败时该样本回退到先验提议分布。
    成本 N(1 + C_MAP + d + 1 + M)，C_MAP 取实际消耗。
    """
    xi = problem.model.check_design(xi)
    if problem.prior.kind == "fixed":
        raise ConfigurationError("dlmcis需要具有密度的先验", path="prior.kind")
    streams = as_streams(rng).child(config.stream_tag or "dlmcis")
    prior = problem.prior
    M = config.m_inner

    def outer(n: int) -> _OuterSample:
        gen = streams.generator(n)
        theta = prior.sample(gen)
        g, eps = simulate(problem, xi, theta, gen)
        Y = ObservationSet(y=g + eps)
        numerator = float(log_likelihood_residuals(problem, Y.y - g))
        cost = 1

        fit = None
        fallback = False
        if config.proposal == "laplace":
            fit, fit_cost, fallback = fit_proposal(problem, Y, xi, config.fd_scheme, config.nelder_mead)
            cost += fit_cost
            if fallback:
                logger.warning(f"dlmcis 样本 {n} 拉普拉斯提议失败，回退到先验")

        if fit is not None:
            inner = sample_laplace(fit, gen, M)
            log_w = (
                log_likelihood_many(problem, Y, xi, inner)
                + prior.logpdf_many(inner)
                - laplace_logpdf_many(fit, inner)
            )
        else:
            inner = prior.sample(gen, M)
            log_w = log_likelihood_many(problem, Y, xi, inner)
        cost += M
        return _OuterSample(summand=numerator - log_mean_exp(log_w), cost=cost, fallback=fallback)

    return _run("dlmcis", outer, config, problem)


def fit_proposal(problem: BayesProblem, Y, xi, scheme: FDScheme, nm_config: Optional[NelderMeadConfig] = None):
    """
    求MAP并拟合拉普拉斯提议分布

    Returns:
        (LaplaceFit或None, 消耗的模型调用次数, 是否回退)
    """
    mp = map_estimate(problem, Y, xi, nm_config)
    cost = mp.map_cost
    if not mp.converged:
        return None, cost, True
    cost += scheme.stencil_size(problem.d)
    try:
        fit = laplace_covariance(problem, xi, mp.theta_hat, scheme, map_cost=mp.map_cost)
    except (SingularFitError, BoundaryError) as e:
        logger.warning(f"提议分布拟合失败: {e}")
        return None, cost, True
    return fit, cost, False


ESTIMATORS = {
    "dlmc": eig_dlmc,
    "mcla": eig_mcla,
    "dlmcis": eig_dlmcis,
}


def estimate_eig(
    problem: BayesProblem,
    xi,
    config: EstimatorConfig,
    rng: Union[RandomStreams, int, None] = None,
) -> EIGEstimate:
    """按配置中的类型分派到对应估计器"""
    return ESTIMATORS[config.kind](problem, xi, config, rng)


def linear_gaussian_eig(problem: BayesProblem) -> float:
    """
    线性高斯模型的解析EIG：½ log(det Σ_pr / det Σ_post)

    Raises:
        ConfigurationError: 模型不是线性高斯模型或先验不是高斯先验
    """
    if not isinstance(problem.model, LinearGaussianModel) or problem.prior.kind != "gaussian":
        raise ConfigurationError("解析EIG仅适用于线性高斯模型与高斯先验", path="model.name")
    J = problem.model.J
    white = problem.noise.chol_inv @ J
    prec_post = problem.n_exp * white.T @ white + np.linalg.inv(problem.prior.cov)
    _, logdet_prec_post = np.linalg.slogdet(prec_post)
    _, logdet_prior = np.linalg.slogdet(problem.prior.cov)
    return 0.5 * float(logdet_prior + logdet_prec_post)
