"""
命令行入口

子命令: estimate / optimize / gradcheck / contour / presets list
退出码: 0 成功, 1 运行失败, 2 配置错误
"""

import functools
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .config import Config
from .errors import ConfigurationError, OEDError
from .estimators import ESTIMATOR_KINDS
from .experiment import run_contour, run_estimate, run_gradcheck, run_optimize
from .presets import list_presets

logger = logging.getLogger(__name__)
console = Console()

EXIT_FAILURE = 1
EXIT_CONFIG = 2


def setup_logging(config: Config) -> None:
    """终端使用RichHandler，配置了 logging.file_path 时另写滚动日志文件"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    root.setLevel(getattr(logging, str(config.logging_level).upper(), logging.INFO))

    root.addHandler(RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False))

    file_path = config.logging_file_path
    if file_path:
        Path(file_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            file_path,
            maxBytes=int(config.logging_max_file_size) * 1024 * 1024,
            backupCount=int(config.logging_backup_count),
            encoding="utf-8",
        )
        file_handler.setFormatter(logging.Formatter(config.logging_format))
        root.addHandler(file_handler)


def parse_vector(text: str, option: str) -> List[float]:
    """解析逗号分隔的设计向量，如 "5500,-100" """
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"无法解析设计向量: {text}", path=option)


def load_config(
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    replications: Optional[int] = None,
    workers: Optional[int] = None,
) -> Config:
    """
    组装命令行配置：--config 文件（严格模式）或 --preset，再叠加命令行参数

    Raises:
        ConfigurationError: 文件缺失、预设未知或验证失败
    """
    if config_path and preset:
        raise ConfigurationError("--config 与 --preset 只能指定一个（文件中可写 preset 键）", path="--preset")
    if config_path:
        config = Config(config_path, strict=True)
    elif preset:
        config = Config.from_preset(preset)
    else:
        config = Config()

    for key, value in (
        ("run.seed", seed),
        ("run.out_dir", out_dir),
        ("run.replications", replications),
        ("run.workers", workers),
    ):
        if value is not None:
            config.set(key, value)

    errors = config.validate()
    if errors:
        raise ConfigurationError("配置验证失败: " + "; ".join(errors))
    return config


def handle_errors(func):
    """把库异常翻译为退出码"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigurationError as e:
            console.print(f"[red]配置错误:[/red] {e}")
            sys.exit(EXIT_CONFIG)
        except OEDError as e:
            logger.error(f"运行失败: {e}")
            console.print(f"[red]运行失败:[/red] {e}")
            sys.exit(EXIT_FAILURE)
    return wrapper


def config_options(func):
    """各子命令共享的配置参数"""
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None, help="YAML配置文件路径"),
        click.option("--preset", default=None, help="内置预设名称"),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="随机种子"),
        click.option("--out", "out_dir", type=click.Path(), default=None, help="输出目录"),
        click.option("--workers", type=click.IntRange(min=1), default=None, help="工作线程数"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _format_vector(values) -> str:
    if values is None:
        return "-"
    return "(" + ", ".join(f"{v:.6g}" for v in np.atleast_1d(values)) + ")"


@click.group()
@click.version_option(version=__version__, prog_name="oedopt")
def main():
    """贝叶斯最优实验设计：EIG估计与随机梯度优化"""


@main.command()
@config_options
@click.option("--xi", default=None, help="设计点，逗号分隔，如 5500,-100")
@click.option("--estimator", "kind", type=click.Choice(ESTIMATOR_KINDS), default=None, help="EIG估计器")
@click.option("--n-outer", type=click.IntRange(min=1), default=None, help="外层样本数N")
@click.option("--m-inner", type=click.IntRange(min=1), default=None, help="内层样本数M")
@handle_errors
def estimate(config_path, preset, seed, out_dir, workers, xi, kind, n_outer, m_inner):
    """在固定设计处估计期望信息增益"""
    config = load_config(config_path, preset, seed=seed, out_dir=out_dir, workers=workers)
    setup_logging(config)
    design = None if xi is None else parse_vector(xi, "--xi")
    overrides = {k: v for k, v in (("kind", kind), ("n_outer", n_outer), ("m_inner", m_inner)) if v is not None}

    result = run_estimate(config, xi=design, out_dir=config.out_dir, **overrides)

    console.print(
        f"[bold]{result.kind}[/bold] EIG = {result.value:.6g} ± {result.std_error:.3g}"
        f"  (N={result.n_outer}, M={result.m_inner}, NCFM={result.ncfm})"
    )
    if result.fallbacks or result.rejections:
        console.print(f"回退到先验采样 {result.fallbacks} 次, 拒绝奇异拟合 {result.rejections} 次")


@main.command()
@config_options
@click.option("--replications", type=click.IntRange(min=1), default=None, help="独立重复次数")
@click.option("--budget", type=click.IntRange(min=1), default=None, help="每次重复的NCFM上限")
@click.option("--no-eig", is_flag=True, default=False, help="不在初始与终止设计处估计EIG")
@handle_errors
def optimize(config_path, preset, seed, out_dir, workers, replications, budget, no_eig):
    """运行多次独立的优化并写出轨迹与汇总报告"""
    config = load_config(config_path, preset, seed=seed, out_dir=out_dir, replications=replications, workers=workers)
    setup_logging(config)

    report = run_optimize(config, out_dir=config.out_dir, budget=budget, evaluate_eig=not no_eig)

    table = Table(title=f"{report.method} + {report.gradient}")
    table.add_column("重复", justify="right")
    table.add_column("状态")
    table.add_column("ξ")
    table.add_column("迭代", justify="right")
    table.add_column("NCFM", justify="right")
    table.add_column("重启", justify="right")
    for r in report.replications:
        table.add_row(str(r.index), r.status, _format_vector(r.xi), str(r.iterations), str(r.ncfm), str(r.restarts))
    console.print(table)
    console.print(f"平均NCFM {report.mean_ncfm:.4g}, 中位NCFM {report.median_ncfm:.4g}, 平均终点 {_format_vector(report.mean_xi)}")
    for label, eig, std in (
        ("初始设计", report.eig_initial, report.posterior_std_initial),
        ("终止设计", report.eig_final, report.posterior_std_final),
    ):
        if eig is not None:
            console.print(f"{label}: EIG = {eig.value:.4g} ± {eig.std_error:.2g}, 后验标准差 {_format_vector(std)}")
    console.print(f"报告已写入 {config.out_dir}")

    if report.failures == len(report.replications):
        raise OEDError("所有重复均失败", context={"messages": [r.message for r in report.replications]})


@main.command()
@config_options
@click.option("--xi", "points", multiple=True, help="检查点，逗号分隔，可重复")
@handle_errors
def gradcheck(config_path, preset, seed, out_dir, workers, points):
    """比较sg_la批平均、全梯度与MCLA中心差分"""
    config = load_config(config_path, preset, seed=seed, out_dir=out_dir, workers=workers)
    setup_logging(config)
    parsed = [parse_vector(p, "--xi") for p in points] or None

    report = run_gradcheck(config, points=parsed, out_dir=config.out_dir)

    table = Table(title="梯度检查")
    table.add_column("ξ")
    table.add_column("sg_la 平均")
    table.add_column("MCLA 差分")
    table.add_column("全梯度")
    table.add_column("|全梯度|", justify="right")
    table.add_column("相对偏差", justify="right")
    for p in report["points"]:
        table.add_row(
            _format_vector(p["xi"]),
            _format_vector(p["sg_la_mean"]),
            _format_vector(p["mcla_fd"]),
            _format_vector(p["full_gradient"]),
            f"{p['full_norm']:.3e}",
            f"{p['la_vs_fd']:.2e}",
        )
    console.print(table)
    if report["fixed_theta_checks"]:
        console.print(
            f"固定θ拉普拉斯梯度 vs 中心差分: {report['fixed_theta_checks']} 点, "
            f"最大相对误差 {report['fixed_theta_max_error']:.2e}"
        )


@main.command()
@config_options
@handle_errors
def contour(config_path, preset, seed, out_dir, workers):
    """在矩形设计网格上计算MCLA EIG，输出CSV"""
    config = load_config(config_path, preset, seed=seed, out_dir=out_dir, workers=workers)
    setup_logging(config)

    frame = run_contour(config, out_dir=config.out_dir)

    best = frame.loc[frame["eig"].idxmax()]
    xi_columns = [c for c in frame.columns if c.startswith("xi_")]
    console.print(
        f"{len(frame)} 个网格点, 最大EIG {best['eig']:.4g} 于 {_format_vector(best[xi_columns].to_numpy(dtype=float))}"
    )
    console.print(f"网格已写入 {Path(config.out_dir) / 'contour.csv'}")


@main.group()
def presets():
    """内置预设"""


@presets.command("list")
def presets_list():
    """列出所有内置预设"""
    table = Table(title="内置预设")
    table.add_column("名称", style="cyan")
    table.add_column("说明")
    for name, description in list_presets():
        table.add_row(name, description)
    console.print(table)


if __name__ == "__main__":
    main()
