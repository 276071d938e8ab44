"""
实验编排模块

把配置组装成完整实验：固定设计处的EIG估计、多次独立重复的优化运行、
梯度一致性检查、EIG等值线网格以及小批量对比研究。结果以CSV轨迹
和YAML汇总报告落盘。
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from ruamel.yaml import YAML

from .bayes import BayesProblem, laplace_covariance, posterior_std
from .config import Config
from .errors import ConfigurationError, OEDError
from .estimators import EIGEstimate, eig_mcla, estimate_eig, mcla_summand
from .gradients import estimate_gradient, full_gradient, la_gradient
from .models import FDScheme
from .optimizers import STATUS_CONVERGED, OptimizerTrace, run
from .sampling import RandomStreams, map_indexed

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """把numpy类型转换为可写入YAML的内置类型"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def save_yaml(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    yaml = YAML(typ="safe")
    yaml.default_flow_style = False
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(_plain(data), f)
    return path


@dataclass
class ReplicationResult:
    """单次优化重复的终止结果"""
    index: int
    status: str
    xi: np.ndarray
    xibar: np.ndarray
    ncfm: int
    iterations: int
    restarts: int
    message: str = ""
    trace_path: Optional[str] = None

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "status": self.status,
            "xi": self.xi,
            "xibar": self.xibar,
            "ncfm": self.ncfm,
            "iterations": self.iterations,
            "restarts": self.restarts,
            "message": self.message,
            "trace": self.trace_path,
        }


@dataclass
class RunReport:
    """多次重复优化的汇总报告"""
    preset: Optional[str]
    method: str
    gradient: str
    seed: int
    replications: List[ReplicationResult] = field(default_factory=list)
    xi0: Optional[np.ndarray] = None
    eig_initial: Optional[EIGEstimate] = None
    eig_final: Optional[EIGEstimate] = None
    posterior_std_initial: Optional[np.ndarray] = None
    posterior_std_final: Optional[np.ndarray] = None

    @property
    def ncfms(self) -> np.ndarray:
        return np.array([r.ncfm for r in self.replications], dtype=float)

    @property
    def mean_ncfm(self) -> float:
        return float(np.mean(self.ncfms)) if self.replications else 0.0

    @property
    def median_ncfm(self) -> float:
        return float(np.median(self.ncfms)) if self.replications else 0.0

    @property
    def failures(self) -> int:
        return sum(1 for r in self.replications if r.status == "failed")

    @property
    def mean_xi(self) -> np.ndarray:
        return np.mean([r.xi for r in self.replications], axis=0)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.replications:
            row = {"index": r.index, "status": r.status, "ncfm": r.ncfm, "iterations": r.iterations, "restarts": r.restarts}
            row.update({f"xi_{i}": float(v) for i, v in enumerate(r.xi)})
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "preset": self.preset,
            "method": self.method,
            "gradient": self.gradient,
            "seed": self.seed,
            "xi0": self.xi0,
            "aggregate": {
                "replications": len(self.replications),
                "failures": self.failures,
                "mean_ncfm": self.mean_ncfm,
                "median_ncfm": self.median_ncfm,
                "mean_xi": self.mean_xi if self.replications else None,
            },
            "eig_initial": self.eig_initial.to_dict() if self.eig_initial else None,
            "eig_final": self.eig_final.to_dict() if self.eig_final else None,
            "posterior_std_initial": self.posterior_std_initial,
            "posterior_std_final": self.posterior_std_final,
            "runs": [r.to_dict() for r in self.replications],
        }

    def save(self, out_dir: Union[str, Path]) -> Path:
        """写出 report.yaml 和 replications.csv"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out_dir / "replications.csv", index=False)
        return save_yaml(self.to_dict(), out_dir / "report.yaml")


def run_estimate(
    config: Config,
    xi=None,
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    **overrides,
) -> EIGEstimate:
    """
    在固定设计处估计EIG

    Args:
        config: 实验配置
        xi: 设计点，默认取 run.xi 或 optimizer.xi0
        seed: 随机种子，默认取 run.seed
        out_dir: 提供时写出 estimate.yaml
        overrides: 覆盖 estimator 节的键

    Returns:
        EIGEstimate
    """
    problem = config.build_problem()
    xi = config.design() if xi is None else np.asarray(xi, dtype=float)
    seed = config.seed if seed is None else seed
    estimate = estimate_eig(problem, xi, config.estimator_config(**overrides), seed)
    if out_dir is not None:
        save_yaml({"preset": config.preset_name, "xi": xi, "seed": seed, **estimate.to_dict()}, Path(out_dir) / "estimate.yaml")
    return estimate


def _posterior_std(config: Config, problem: BayesProblem, xi) -> Optional[np.ndarray]:
    if problem.prior.kind == "fixed":
        return None
    try:
        return posterior_std(problem, xi, scheme=config.fd_scheme()) / config.prior_unit_scale
    except OEDError as e:
        logger.warning(f"后验标准差计算失败: {e}")
        return None


def run_optimize(
    config: Config,
    replications: Optional[int] = None,
    workers: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    budget: Optional[int] = None,
    seed: Optional[int] = None,
    evaluate_eig: bool = True,
) -> RunReport:
    """
    运行多次独立的优化重复

    重复 r 使用随机流 RandomStreams(seed).child("replication", r)；每次重复构造
    独立的问题实例，结果按重复序号合并，与线程数无关。

    Args:
        config: 实验配置
        replications: 重复次数，默认取 run.replications
        workers: 并行运行的重复数
        out_dir: 输出目录，写出 trace_XX.csv、replications.csv 与 report.yaml
        budget: 覆盖 optimizer.max_ncfm
        seed: 覆盖 run.seed
        evaluate_eig: 是否在初始与终止设计处估计EIG

    Returns:
        RunReport
    """
    replications = config.replications if replications is None else replications
    workers = config.workers if workers is None else workers
    seed = config.seed if seed is None else seed
    opt_config = config.optimizer_config(seed=seed)
    if budget is not None:
        opt_config = replace(opt_config, max_ncfm=budget)
    grad_config = config.gradient_config()
    if replications > 1:
        grad_config = replace(grad_config, workers=1)
    xi0 = config.xi0()
    target = config.target()
    base_streams = RandomStreams(seed)
    out_path = None if out_dir is None else Path(out_dir)

    logger.info(
        f"开始 {replications} 次重复优化: 预设 {config.preset_name}, "
        f"{opt_config.method} + {grad_config.kind}"
    )

    def replicate(index: int) -> ReplicationResult:
        problem = config.build_problem()
        trace: OptimizerTrace = run(
            problem, grad_config, opt_config, xi0, rng=base_streams.child("replication", index), target=target
        )
        trace_path = None
        if out_path is not None:
            trace_path = str(trace.save_csv(out_path / f"trace_{index:02d}.csv"))
        return ReplicationResult(
            index=index,
            status=trace.status,
            xi=trace.final_xi,
            xibar=trace.final_xibar,
            ncfm=trace.ncfm,
            iterations=trace.iterations,
            restarts=trace.restarts,
            message=trace.message,
            trace_path=trace_path,
        )

    results = map_indexed(replicate, replications, workers)
    report = RunReport(
        preset=config.preset_name,
        method=opt_config.method,
        gradient=grad_config.kind,
        seed=seed,
        replications=results,
        xi0=xi0,
    )

    problem = config.build_problem()
    if evaluate_eig and problem.prior.kind != "fixed":
        est_config = config.estimator_config()
        report.eig_initial = estimate_eig(problem, xi0, est_config, seed)
        report.eig_final = estimate_eig(problem, report.mean_xi, est_config, seed)
    report.posterior_std_initial = _posterior_std(config, problem, xi0)
    report.posterior_std_final = _posterior_std(config, problem, report.mean_xi)

    if out_path is not None:
        report.save(out_path)
    logger.info(
        f"优化完成: 平均NCFM {report.mean_ncfm:.4g}, 中位NCFM {report.median_ncfm:.4g}, "
        f"失败 {report.failures}/{replications}"
    )
    return report


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def mcla_design_fd(problem: BayesProblem, xi, theta, rel_step: float = 1e-5) -> np.ndarray:
    """固定theta时MCLA被积函数对设计的中心差分梯度"""
    scheme = FDScheme(mode="central", rel_step=rel_step)
    xi = np.asarray(xi, dtype=float)
    h = scheme.steps(xi)
    grad = np.empty(xi.size)
    for s in range(xi.size):
        step = np.zeros(xi.size)
        step[s] = h[s]
        up = laplace_covariance(problem, xi + step, theta, scheme)
        down = laplace_covariance(problem, xi - step, theta, scheme)
        grad[s] = (mcla_summand(problem, up.logdet_cov, theta) - mcla_summand(problem, down.logdet_cov, theta)) / (
            2.0 * h[s]
        )
    return grad


def run_gradcheck(
    config: Config,
    points: Optional[Sequence[Sequence[float]]] = None,
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> Dict[str, Any]:
    """
    梯度一致性检查

    对每个设计点比较：sg_la 的批平均、gradcheck.kind 的全梯度、以及相同先验样本下
    MCLA估计的中心差分；另外在 n_fixed 个随机 (ξ, θ) 上比较拉普拉斯梯度与被积函数的中心差分。

    Returns:
        报告字典，含各点的梯度、范数与最大相对偏差
    """
    problem = config.build_problem()
    seed = config.seed if seed is None else seed
    section = config.get("gradcheck") or {}
    n_outer = int(section.get("n_outer", 10000))
    m_inner = int(section.get("m_inner", 100))
    rel_step = float(section.get("rel_step", 1e-5))
    points = points if points is not None else (section.get("points") or [config.xi0().tolist()])
    streams = RandomStreams(seed)
    base = config.gradient_config()
    central = FDScheme(mode="central", rel_step=rel_step)
    la_config = replace(base, kind="sg_la", batch=n_outer, fd_scheme=central)
    mcla_config = config.estimator_config(kind="mcla", n_outer=n_outer)
    mcla_config = replace(mcla_config, fd_scheme=central)

    point_reports = []
    for xi in points:
        xi = problem.model.check_design(xi)
        # sg_la 与 MCLA 使用同一组先验样本
        la_mean = estimate_gradient(problem, xi, la_config, streams.child("mcla")).grad
        h = central.steps(xi)
        fd = np.empty(xi.size)
        for s in range(xi.size):
            step = np.zeros(xi.size)
            step[s] = h[s]
            up = eig_mcla(problem, xi + step, mcla_config, streams)
            down = eig_mcla(problem, xi - step, mcla_config, streams)
            fd[s] = (up.value - down.value) / (2.0 * h[s])
        full = full_gradient(problem, xi, section.get("kind", "sg_mcis"), n_outer, m_inner, streams.child("full"), base)
        point_reports.append({
            "xi": xi,
            "sg_la_mean": la_mean,
            "mcla_fd": fd,
            "full_gradient": full.grad,
            "full_kind": full.kind,
            "full_norm": full.norm,
            "full_ncfm": full.ncfm,
            "la_vs_fd": _relative_error(la_mean, fd),
        })
        logger.info(f"梯度检查 ξ = {xi}: |∇{full.kind}| = {full.norm:.3e}, sg_la与差分相对偏差 {point_reports[-1]['la_vs_fd']:.2e}")

    fixed_errors = []
    n_fixed = int(section.get("n_fixed", 20))
    lower, upper = problem.model.lower, problem.model.upper
    if problem.prior.kind != "fixed" and np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)):
        gen = streams.generator("fixed")
        for _ in range(n_fixed):
            xi = lower + (upper - lower) * (0.1 + 0.8 * gen.random(lower.size))
            theta = problem.prior.sample(gen)
            analytic, _ = la_gradient(problem, xi, theta, central)
            fixed_errors.append(_relative_error(analytic, mcla_design_fd(problem, xi, theta, rel_step)))

    report = {
        "preset": config.preset_name,
        "seed": seed,
        "n_outer": n_outer,
        "m_inner": m_inner,
        "points": point_reports,
        "max_la_vs_fd": max((p["la_vs_fd"] for p in point_reports), default=0.0),
        "fixed_theta_max_error": max(fixed_errors, default=0.0),
        "fixed_theta_checks": len(fixed_errors),
    }
    if out_dir is not None:
        save_yaml(report, Path(out_dir) / "gradcheck.yaml")
    return report


def contour_grid(config: Config) -> List[np.ndarray]:
    """按 contour 节生成各坐标的网格，缺省范围取模型边界"""
    model = config.build_model()
    section = config.get("contour") or {}
    axes = []
    for i, (key, count_key) in enumerate((("x_range", "nx"), ("y_range", "ny"))[: model.dim_xi]):
        bounds = section.get(key) or [model.lower[i], model.upper[i]]
        lo, hi = float(bounds[0]), float(bounds[1])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ConfigurationError("等值线网格需要有限范围", path=f"contour.{key}")
        axes.append(np.linspace(lo, hi, int(section.get(count_key, 21))))
    return axes


def run_contour(
    config: Config,
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    在矩形设计网格上用MCLA估计EIG

    每个网格点使用同一种子（公共随机数），输出列 xi_0, xi_1, eig, std_error。
    """
    problem = config.build_problem()
    seed = config.seed if seed is None else seed
    n_outer = int((config.get("contour") or {}).get("n_outer", 200))
    est_config = config.estimator_config(kind="mcla", n_outer=n_outer)
    axes = contour_grid(config)
    mesh = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1)

    rows = []
    for xi in mesh:
        estimate = eig_mcla(problem, xi, est_config, seed)
        row = {f"xi_{i}": float(v) for i, v in enumerate(xi)}
        row.update({"eig": estimate.value, "std_error": estimate.std_error})
        rows.append(row)
    frame = pd.DataFrame(rows)
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path / "contour.csv", index=False)
    best = frame.loc[frame["eig"].idxmax()]
    logger.info(f"等值线完成: {len(frame)} 个点, 最大EIG {best['eig']:.4g}")
    return frame


def run_minibatch_study(
    config: Config,
    batches: Sequence[int] = (1, 10, 100),
    replications: int = 5,
    budget: Optional[int] = None,
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    小批量对比：相同NCFM预算下不同批大小的终止误差

    每个批大小运行 replications 次直到耗尽预算（默认取 optimizer.max_ncfm），
    记录终止点与滑动平均到 optimizer.target 的距离。
    """
    target = config.target()
    if target is None:
        raise ConfigurationError("小批量研究需要已知最优设计", path="optimizer.target")
    seed = config.seed if seed is None else seed
    opt_config = config.optimizer_config(seed=seed)
    budget = opt_config.max_ncfm if budget is None else budget
    if budget is None:
        raise ConfigurationError("小批量研究需要NCFM预算", path="optimizer.max_ncfm")
    opt_config = replace(opt_config, max_ncfm=budget, max_iters=max(opt_config.max_iters, budget))
    xi0 = config.xi0()
    rows = []
    for batch in batches:
        grad_config = replace(config.gradient_config(), batch=int(batch))
        for index in range(replications):
            problem = config.build_problem()
            trace = run(problem, grad_config, opt_config, xi0, rng=RandomStreams(seed).child("batch", int(batch), index))
            rows.append({
                "batch": int(batch),
                "replication": index,
                "ncfm": trace.ncfm,
                "iterations": trace.iterations,
                "error": float(np.linalg.norm(trace.final_xi - target)),
                "error_avg": float(np.linalg.norm(trace.final_xibar - target)),
            })
    frame = pd.DataFrame(rows)
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path / "minibatch.csv", index=False)
    return frame
