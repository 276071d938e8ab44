"""
配置管理模块

负责加载和管理实验配置，支持YAML文件、内置预设和环境变量，
并把配置树构造成模型、先验、噪声及各估计器/优化器配置对象。
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv
from ruamel.yaml import YAML

from .bayes import BayesProblem, NelderMeadConfig, NoiseModel, Prior, create_problem
from .errors import ConfigurationError
from .estimators import EstimatorConfig
from .gradients import GradientConfig
from .models import FDScheme, ForwardModel, builtin
from .optimizers import OptimizerConfig

logger = logging.getLogger(__name__)

UNIT_SCALES = {None: 1.0, "MPa": 1.0, "GPa": 1000.0}


class ConfigSection:
    """配置节类"""

    def __init__(self, parent_config, section_key: str):
        self.parent_config = parent_config
        self.section_key = section_key

    def __getattr__(self, key: str):
        """动态属性访问"""
        full_key = f"{self.section_key}.{key}"
        return self.parent_config.get(full_key)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并，override中的值优先"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Config:
    """实验配置管理类"""

    SECTIONS = (
        "model", "prior", "noise", "fd", "nelder_mead", "estimator",
        "gradient", "optimizer", "run", "contour", "gradcheck", "logging",
    )

    def __init__(self, config_path: Optional[str] = None, strict: bool = False, data: Optional[Dict[str, Any]] = None):
        """
        初始化配置管理器

        Args:
            config_path: 配置文件路径，默认为 config/config.yaml
            strict: 严格模式下文件缺失或解析失败抛出 ConfigurationError
            data: 直接给定的配置树（不读文件）
        """
        self.strict = strict
        self.config: Dict[str, Any] = {}
        if data is not None:
            self.config_path = None
            self.config = self._merge_with_preset(data)
        else:
            self.config_path = config_path or self._get_default_config_path()
            self._load_config()

        # 创建嵌套配置对象
        for section in self.SECTIONS:
            setattr(self, section if section != "logging" else "logging_config", ConfigSection(self, section))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        return cls(data=data)

    @classmethod
    def from_preset(cls, name: str, overrides: Optional[Dict[str, Any]] = None) -> "Config":
        """由内置预设创建配置"""
        return cls(data=_deep_merge({"preset": name}, overrides or {}))

    def _get_default_config_path(self) -> str:
        """获取默认配置文件路径"""
        # 优先从环境变量获取
        config_path = os.getenv("OEDOPT_CONFIG_PATH")
        if config_path:
            return config_path

        # 默认路径
        return "config/config.yaml"

    def _load_config(self) -> None:
        """加载配置文件"""
        # 加载.env文件
        load_dotenv()

        config_file = Path(self.config_path)
        if not config_file.exists():
            if self.strict:
                raise ConfigurationError(f"配置文件不存在: {self.config_path}", path="--config")
            logger.warning(f"配置文件不存在: {self.config_path}")
            self.config = self._get_default_config()
            return

        try:
            yaml = YAML(typ="safe")
            with open(config_file, "r", encoding="utf-8") as f:
                data = yaml.load(f) or {}
        except Exception as e:
            if self.strict:
                raise ConfigurationError(f"加载配置文件失败: {e}", path="--config")
            logger.error(f"加载配置文件失败: {e}")
            self.config = self._get_default_config()
            return

        if not isinstance(data, dict):
            raise ConfigurationError("配置文件顶层必须是映射", path="--config")
        self.config = self._merge_with_preset(data)
        logger.info(f"配置文件加载成功: {self.config_path}")

    def _merge_with_preset(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """默认配置 <- 预设 <- 用户配置，随后做环境变量替换"""
        from .presets import get_preset

        merged = self._get_default_config()
        preset = data.get("preset")
        if preset:
            merged = _deep_merge(merged, get_preset(preset))
        merged = _deep_merge(merged, data)
        return self._process_env_vars(merged)

    @staticmethod
    def _process_env_vars(config: Dict[str, Any]) -> Dict[str, Any]:
        """处理配置中的环境变量替换"""
        def replace_env_vars(obj):
            if isinstance(obj, dict):
                return {k: replace_env_vars(v) for k, v in obj.items()}
            elif isinstance(obj, list):
                return [replace_env_vars(item) for item in obj]
            elif isinstance(obj, str) and obj.startswith("${") and obj.endswith("}"):
                env_var = obj[2:-1]
                return os.getenv(env_var, obj)
            else:
                return obj

        return replace_env_vars(config)

    def _get_default_config(self) -> Dict[str, Any]:
        """获取默认配置（二次OED模型）"""
        return {
            "preset": None,
            "model": {"name": "example2_quadratic_oed", "params": {}},
            "prior": {"kind": "gaussian", "mean": [0.0], "std": [0.01], "units": None},
            "noise": {"std": [0.01]},
            "n_exp": 1,
            "fd": {"mode": "forward", "rel_step": None},
            "nelder_mead": {"initial_offset": 0.05, "ftol": 1e-10, "max_iter_per_dim": 200},
            "estimator": {"kind": "mcla", "n_outer": 1000, "m_inner": 100, "proposal": "laplace"},
            "gradient": {"kind": "sg_la", "batch": 1, "m_inner": 100, "proposal": "laplace", "analytic": False},
            "optimizer": {
                "method": "rasgd",
                "alpha0": 1.0,
                "q": 0.0,
                "schedule": None,
                "max_iters": 1000,
                "max_ncfm": None,
                "restart": "gradient",
                "tol": 0.01,
                "xi0": [1.0, 1.0],
                "target": None,
                "bound_diameter": None,
                "bound_sigma": None,
                "log_every": 100,
            },
            "run": {"seed": 0, "replications": 10, "workers": 1, "out_dir": "./results", "xi": None},
            "contour": {"x_range": None, "y_range": None, "nx": 21, "ny": 21, "n_outer": 200},
            "gradcheck": {
                "kind": "sg_mcis",
                "points": None,
                "n_outer": 10000,
                "m_inner": 100,
                "n_fixed": 20,
                "rel_step": 1e-5,
            },
            "logging": {
                "level": "INFO",
                "file_path": None,
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                "max_file_size": 10,
                "backup_count": 5,
            },
        }

    def get(self, key: str, default: Any = None) -> Any:
        """
        获取配置值，支持点号分隔的嵌套键

        Args:
            key: 配置键，如 'optimizer.alpha0'
            default: 默认值

        Returns:
            配置值
        """
        keys = key.split(".")
        value = self.config

        try:
            for k in keys:
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any) -> None:
        """
        设置配置值

        Args:
            key: 配置键，如 'run.seed'
            value: 配置值
        """
        keys = key.split(".")
        config = self.config

        for k in keys[:-1]:
            if k not in config or not isinstance(config[k], dict):
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

    # 便捷属性访问
    @property
    def preset_name(self) -> Optional[str]:
        return self.get("preset")

    @property
    def n_exp(self) -> int:
        return self._as_int("n_exp", self.get("n_exp", 1))

    @property
    def seed(self) -> int:
        seed = self._as_int("run.seed", self.get("run.seed", 0))
        if seed < 0:
            raise ConfigurationError(f"种子必须非负: {seed}", path="run.seed")
        return seed

    @property
    def replications(self) -> int:
        """独立重复运行次数"""
        return self._as_int("run.replications", self.get("run.replications", 10))

    @property
    def workers(self) -> int:
        """工作线程数"""
        return self._as_int("run.workers", self.get("run.workers", 1))

    @property
    def out_dir(self) -> Path:
        """输出目录"""
        return Path(self.get("run.out_dir", "./results"))

    @property
    def prior_unit_scale(self) -> float:
        """先验单位到内部单位（MPa）的换算因子"""
        units = self.get("prior.units")
        if units not in UNIT_SCALES:
            raise ConfigurationError(f"未知的先验单位: {units}", path="prior.units")
        return UNIT_SCALES[units]

    @property
    def logging_level(self) -> str:
        """日志级别"""
        # 环境变量可以覆盖配置文件
        return os.getenv("OEDOPT_LOG_LEVEL", self.get("logging.level", "INFO"))

    @property
    def logging_file_path(self) -> Optional[str]:
        """日志文件路径，为空时只输出到终端"""
        return self.get("logging.file_path")

    @property
    def logging_format(self) -> str:
        """日志格式"""
        return self.get("logging.format", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    @property
    def logging_max_file_size(self) -> int:
        """日志文件最大大小（MB）"""
        return self.get("logging.max_file_size", 10)

    @property
    def logging_backup_count(self) -> int:
        """日志文件备份数量"""
        return self.get("logging.backup_count", 5)

    @staticmethod
    def _as_int(path: str, value: Any) -> int:
        if isinstance(value, bool):
            raise ConfigurationError(f"应为整数: {value}", path=path)
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"应为整数: {value}", path=path)
        if not number.is_integer():
            raise ConfigurationError(f"应为整数: {value}", path=path)
        return int(number)

    @staticmethod
    def _as_vector(path: str, value: Any, scale: float = 1.0) -> np.ndarray:
        if value is None:
            raise ConfigurationError("缺少必需的数值", path=path)
        try:
            return np.atleast_1d(np.asarray(value, dtype=float)) * scale
        except (TypeError, ValueError):
            raise ConfigurationError(f"应为数值数组: {value}", path=path)

    def _section(self, name: str) -> Dict[str, Any]:
        section = self.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigurationError("配置节必须是映射", path=name)
        return section

    # 对象构造
    def fd_scheme(self) -> FDScheme:
        fd = self._section("fd")
        return FDScheme(mode=fd.get("mode", "forward"), rel_step=fd.get("rel_step"))

    def nelder_mead_config(self) -> NelderMeadConfig:
        nm = self._section("nelder_mead")
        try:
            return NelderMeadConfig(
                initial_offset=float(nm.get("initial_offset", 0.05)),
                ftol=float(nm.get("ftol", 1e-10)),
                max_iter_per_dim=self._as_int("nelder_mead.max_iter_per_dim", nm.get("max_iter_per_dim", 200)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Nelder-Mead参数非法: {e}", path="nelder_mead")

    def build_model(self) -> ForwardModel:
        model = self._section("model")
        return builtin(model.get("name"), model.get("params") or {})

    def build_prior(self) -> Prior:
        """按 prior.kind 构造先验，prior.units 为 GPa 时换算为 MPa"""
        prior = self._section("prior")
        kind = prior.get("kind", "gaussian")
        scale = self.prior_unit_scale
        if kind == "gaussian":
            mean = self._as_vector("prior.mean", prior.get("mean"), scale)
            if prior.get("cov") is not None:
                cov = self._as_vector("prior.cov", prior.get("cov"), scale * scale)
                return Prior.gaussian(mean, cov=np.atleast_2d(cov))
            return Prior.gaussian(mean, std=self._as_vector("prior.std", prior.get("std"), scale))
        if kind == "uniform":
            return Prior.uniform(
                self._as_vector("prior.lo", prior.get("lo"), scale),
                self._as_vector("prior.hi", prior.get("hi"), scale),
            )
        if kind == "fixed":
            return Prior.fixed(self._as_vector("prior.value", prior.get("value"), scale))
        raise ConfigurationError(f"未知的先验类型: {kind}", path="prior.kind")

    def build_noise(self) -> NoiseModel:
        noise = self._section("noise")
        if noise.get("cov") is not None:
            return NoiseModel(cov=np.atleast_2d(self._as_vector("noise.cov", noise.get("cov"))))
        return NoiseModel.from_std(self._as_vector("noise.std", noise.get("std")))

    def build_problem(self) -> BayesProblem:
        """构造完整的贝叶斯问题"""
        return create_problem(self.build_model(), self.build_prior(), self.build_noise(), self.n_exp)

    def estimator_config(self, **overrides) -> EstimatorConfig:
        est = _deep_merge(self._section("estimator"), overrides)
        return EstimatorConfig(
            kind=est.get("kind", "mcla"),
            n_outer=self._as_int("estimator.n_outer", est.get("n_outer", 1000)),
            m_inner=self._as_int("estimator.m_inner", est.get("m_inner", 100)),
            fd_scheme=self.fd_scheme(),
            proposal=est.get("proposal", "laplace"),
            nelder_mead=self.nelder_mead_config(),
            workers=self.workers,
            stream_tag=est.get("stream_tag"),
        )

    def gradient_config(self, **overrides) -> GradientConfig:
        grad = _deep_merge(self._section("gradient"), overrides)
        return GradientConfig(
            kind=grad.get("kind", "sg_la"),
            batch=self._as_int("gradient.batch", grad.get("batch", 1)),
            m_inner=self._as_int("gradient.m_inner", grad.get("m_inner", 100)),
            fd_scheme=self.fd_scheme(),
            proposal=grad.get("proposal", "laplace"),
            nelder_mead=self.nelder_mead_config(),
            analytic=bool(grad.get("analytic", False)),
            workers=self.workers,
            keep_samples=bool(grad.get("keep_samples", False)),
        )

    def optimizer_config(self, seed: Optional[int] = None) -> OptimizerConfig:
        opt = self._section("optimizer")
        max_ncfm = opt.get("max_ncfm")
        try:
            return OptimizerConfig(
                method=opt.get("method", "rasgd"),
                alpha0=float(opt.get("alpha0", 1.0)),
                q=float(opt.get("q", 0.0)),
                schedule=opt.get("schedule"),
                max_iters=self._as_int("optimizer.max_iters", opt.get("max_iters", 1000)),
                max_ncfm=None if max_ncfm is None else self._as_int("optimizer.max_ncfm", max_ncfm),
                seed=self.seed if seed is None else seed,
                restart=opt.get("restart", "gradient"),
                tol=float(opt.get("tol", 0.01)),
                bound_diameter=opt.get("bound_diameter"),
                bound_sigma=opt.get("bound_sigma"),
                log_every=self._as_int("optimizer.log_every", opt.get("log_every", 100)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"优化器参数非法: {e}", path="optimizer")

    def xi0(self) -> np.ndarray:
        return self._as_vector("optimizer.xi0", self.get("optimizer.xi0"))

    def target(self) -> Optional[np.ndarray]:
        target = self.get("optimizer.target")
        return None if target is None else self._as_vector("optimizer.target", target)

    def design(self) -> np.ndarray:
        """estimate命令的设计点，缺省时使用 optimizer.xi0"""
        xi = self.get("run.xi")
        return self.xi0() if xi is None else self._as_vector("run.xi", xi)

    def validate(self) -> List[str]:
        """
        验证配置完整性

        Returns:
            带配置路径的错误信息列表，空列表表示验证通过
        """
        errors = []

        checks = [
            self.fd_scheme,
            self.nelder_mead_config,
            self.estimator_config,
            self.gradient_config,
            self.optimizer_config,
        ]
        for check in checks:
            try:
                check()
            except ConfigurationError as e:
                errors.append(str(e))

        try:
            model = self.build_model()
            self.build_problem()
            for path, getter in (("optimizer.xi0", self.xi0), ("optimizer.target", self.target), ("run.xi", self.design)):
                xi = getter()
                if xi is not None and xi.size != model.dim_xi:
                    errors.append(f"设计向量维度应为 {model.dim_xi}: {xi.tolist()} ({path})")
        except ConfigurationError as e:
            errors.append(str(e))

        try:
            if self.replications < 1:
                errors.append(f"重复次数必须 >= 1: {self.replications} (run.replications)")
            if self.workers < 1:
                errors.append(f"线程数必须 >= 1: {self.workers} (run.workers)")
            self.seed
        except ConfigurationError as e:
            errors.append(str(e))

        return errors


# 全局配置实例
_config: Optional[Config] = None


def get_config(config_path: Optional[str] = None) -> Config:
    """
    获取全局配置实例

    Args:
        config_path: 配置文件路径

    Returns:
        配置实例
    """
    global _config
    if _config is None:
        _config = Config(config_path)
    return _config


def reload_config(config_path: Optional[str] = None) -> Config:
    """
    重新加载配置

    Args:
        config_path: 配置文件路径

    Returns:
        新的配置实例
    """
    global _config
    _config = Config(config_path)
    return _config
