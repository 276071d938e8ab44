"""
内置实验预设

预设是部分配置树，加载时合并在默认配置之上：
- example1_*:    随机二次函数（非OED），比较 SGD / ASGD(q*) / rASGD
- example2_*:    二次OED模型，4种优化方法 x 3种梯度估计器
- timoshenko_*:  Timoshenko梁应变片布置的四组参数
- linear_gaussian / null_experiment: 具有解析EIG的检验问题
"""

import copy
import logging
from typing import Any, Dict, List, Tuple

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

EXAMPLE1_DIM = 20
EXAMPLE1_ALPHA0 = 2.0 / 21.0
EXAMPLE1_Q = 1.0 / 20.0

# (N*, M*) 以目标容差 0.01 在初始设计处选定
EXAMPLE2_SAMPLES = {
    "mc": {"gradient": "sg_mc", "estimator": "dlmc", "n_outer": 2447, "m_inner": 80},
    "la": {"gradient": "sg_la", "estimator": "mcla", "n_outer": 966, "m_inner": 1},
    "mcis": {"gradient": "sg_mcis", "estimator": "dlmcis", "n_outer": 2402, "m_inner": 7},
}
EXAMPLE2_BUDGET = {"fgd": 2_000_000, "sgd": 2_000_000, "asgd": 500_000, "rasgd": 500_000}

# (N_e, σ_E, σ_G [GPa], σ_ε1, σ_ε2)
TIMOSHENKO_CASES = {
    1: (3, 9.00, 3.46, 6.25e-4, 1.30e-4),
    2: (1, 6.00, 2.31, 3.75e-4, 0.78e-4),
    3: (1, 6.00, 0.46, 3.75e-4, 0.78e-4),
    4: (1, 1.20, 2.31, 3.75e-4, 0.78e-4),
}
TIMOSHENKO_OPTIMA = {
    1: (8022.59, -1000.0),
    2: (7962.77, -1000.0),
    3: (5004.47, -1000.0),
    4: (10000.0, -1000.0),
}
# 初始设计与最优设计处的MCLA EIG参考值 (nats)
TIMOSHENKO_EIG = {
    1: (0.14, 2.43),
    2: (0.23, 3.35),
    3: (0.06, 1.28),
    4: (0.22, 1.94),
}
# 在先验、噪声与模型下可复现的参考值
TIMOSHENKO_EIG_REPRODUCIBLE = (3, 4)
TIMOSHENKO_XI0 = [5500.0, -100.0]
TIMOSHENKO_ALPHA0 = 2.0e5


def _example1(method: str, sigma: float) -> Dict[str, Any]:
    prior = (
        {"kind": "fixed", "value": [0.0] * EXAMPLE1_DIM}
        if sigma == 0.0
        else {"kind": "gaussian", "mean": [0.0] * EXAMPLE1_DIM, "std": [sigma] * EXAMPLE1_DIM}
    )
    return {
        "model": {"name": "example1_quadratic", "params": {"n": EXAMPLE1_DIM}},
        "prior": prior,
        "noise": {"std": [1.0]},
        "gradient": {"kind": "sg_direct", "analytic": True, "batch": 1},
        "optimizer": {
            "method": method,
            "alpha0": EXAMPLE1_ALPHA0,
            "q": EXAMPLE1_Q if method == "asgd" else 0.0,
            "schedule": "constant" if sigma == 0.0 else "inv_sqrt",
            "max_iters": 2000 if sigma == 0.0 else 20000,
            "xi0": [1.0] * EXAMPLE1_DIM,
            "target": [0.0] * EXAMPLE1_DIM,
            "tol": 1e-8 if sigma == 0.0 else 1e-2,
        },
        "run": {"replications": 1 if sigma == 0.0 else 20},
    }


def _example2(method: str, estimator: str) -> Dict[str, Any]:
    samples = EXAMPLE2_SAMPLES[estimator]
    full = method == "fgd"
    return {
        "model": {"name": "example2_quadratic_oed", "params": {}},
        "prior": {"kind": "gaussian", "mean": [0.0], "std": [0.01]},
        "noise": {"std": [0.01]},
        "n_exp": 1,
        "estimator": {
            "kind": samples["estimator"],
            "n_outer": samples["n_outer"],
            "m_inner": samples["m_inner"],
        },
        "gradient": {
            "kind": samples["gradient"],
            "batch": samples["n_outer"] if full else 1,
            "m_inner": samples["m_inner"],
        },
        "optimizer": {
            "method": method,
            "alpha0": 1.0,
            "schedule": "constant" if full else "inv_sqrt",
            "max_iters": 100000,
            "max_ncfm": EXAMPLE2_BUDGET[method],
            "xi0": [1.0, 1.0],
            "target": [0.0, 0.0],
            "tol": 0.01,
        },
        "contour": {"x_range": [-2.0, 2.0], "y_range": [-2.0, 2.0], "nx": 21, "ny": 21, "n_outer": 200},
        "gradcheck": {"kind": "sg_mcis", "points": [[0.0, 0.0]], "n_outer": 10000, "m_inner": 100},
        "run": {"replications": 10},
    }


def _timoshenko(case: int) -> Dict[str, Any]:
    n_exp, sigma_e, sigma_g, noise_1, noise_2 = TIMOSHENKO_CASES[case]
    return {
        "model": {"name": "timoshenko", "params": {}},
        "prior": {"kind": "gaussian", "mean": [30.00, 11.54], "std": [sigma_e, sigma_g], "units": "GPa"},
        "noise": {"std": [noise_1, noise_2]},
        "n_exp": n_exp,
        "estimator": {"kind": "mcla", "n_outer": 1000},
        "gradient": {"kind": "sg_la", "batch": 1},
        "optimizer": {
            "method": "rasgd",
            "alpha0": TIMOSHENKO_ALPHA0,
            "max_iters": 2000,
            "xi0": list(TIMOSHENKO_XI0),
            "target": None,
        },
        "contour": {"x_range": [0.0, 10000.0], "y_range": [-1000.0, 1000.0], "nx": 41, "ny": 21, "n_outer": 200},
        "gradcheck": {
            "kind": "sg_mcis",
            "points": [list(TIMOSHENKO_OPTIMA[case])],
            "n_outer": 1000,
            "m_inner": 100,
        },
        "run": {"replications": 10, "xi": list(TIMOSHENKO_XI0)},
    }


def _linear_gaussian(J: float, B: float) -> Dict[str, Any]:
    return {
        "model": {"name": "linear_gaussian", "params": {"J": [[J]], "B": [[B]], "dim_xi": 1}},
        "prior": {"kind": "gaussian", "mean": [0.0], "std": [1.0]},
        "noise": {"std": [0.5]},
        "n_exp": 1,
        "estimator": {"kind": "mcla", "n_outer": 2000, "m_inner": 200},
        "gradient": {"kind": "sg_la", "batch": 1, "m_inner": 200},
        "optimizer": {"method": "rasgd", "alpha0": 1.0, "max_iters": 100, "xi0": [0.0], "target": None},
        "contour": {"x_range": [-1.0, 1.0], "y_range": None, "nx": 5, "ny": 1, "n_outer": 200},
        "gradcheck": {"kind": "sg_mcis", "points": [[0.0]], "n_outer": 1000, "m_inner": 100},
        "run": {"replications": 1, "xi": [0.0]},
    }


def _build_presets() -> Dict[str, Tuple[str, Dict[str, Any]]]:
    presets = {
        "example1_deterministic": ("随机二次函数, σ_θ=0, 解析梯度FGD", _example1("fgd", 0.0)),
        "linear_gaussian": ("线性高斯模型, 解析EIG = ½log 5", _linear_gaussian(1.0, 0.0)),
        "null_experiment": ("与θ无关的模型, EIG = 0", _linear_gaussian(0.0, 1.0)),
    }
    for method in ("sgd", "asgd", "rasgd"):
        presets[f"example1_{method}"] = (f"随机二次函数, σ_θ=0.01, {method}", _example1(method, 0.01))
        presets[f"example1_{method}_sigma01"] = (f"随机二次函数, σ_θ=0.1, {method}", _example1(method, 0.1))
    for method in ("fgd", "sgd", "asgd", "rasgd"):
        for estimator in ("mc", "la", "mcis"):
            presets[f"example2_{method}_{estimator}"] = (
                f"二次OED模型, {method} + {EXAMPLE2_SAMPLES[estimator]['gradient']}",
                _example2(method, estimator),
            )
    # 固定 1000 次模型调用预算下 M=1 的重要性采样梯度
    fixed_budget = _example2("rasgd", "mcis")
    fixed_budget["gradient"]["m_inner"] = 1
    fixed_budget["optimizer"]["max_ncfm"] = 1000
    presets["example2_rasgd_mcis_m1"] = ("二次OED模型, rasgd + sg_mcis (M=1), 预算1000", fixed_budget)
    for case in TIMOSHENKO_CASES:
        presets[f"timoshenko_case{case}"] = (f"Timoshenko梁, 第{case}组参数", _timoshenko(case))
    return presets


PRESETS = _build_presets()


def get_preset(name: str) -> Dict[str, Any]:
    """
    获取预设配置树（深拷贝）

    Raises:
        ConfigurationError: 未知预设
    """
    if name not in PRESETS:
        raise ConfigurationError(f"未知的预设: {name}", path="preset")
    logger.debug(f"加载预设: {name}")
    data = copy.deepcopy(PRESETS[name][1])
    data["preset"] = name
    return data


def list_presets() -> List[Tuple[str, str]]:
    """(名称, 描述) 列表，按名称排序"""
    return sorted((name, description) for name, (description, _) in PRESETS.items())
