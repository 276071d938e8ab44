"""
内置预设测试
"""

import pytest

from oedopt.config import Config
from oedopt.errors import ConfigurationError
from oedopt.experiment import run_estimate
from oedopt.presets import (
    EXAMPLE2_SAMPLES,
    PRESETS,
    TIMOSHENKO_CASES,
    TIMOSHENKO_EIG,
    TIMOSHENKO_EIG_REPRODUCIBLE,
    TIMOSHENKO_OPTIMA,
    TIMOSHENKO_XI0,
    get_preset,
    list_presets,
)


class TestPresets:
    """预设测试"""

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_every_preset_validates(self, name):
        """测试每个预设都能通过验证并构造问题"""
        config = Config.from_preset(name)
        assert config.validate() == []
        config.build_problem()
        config.gradient_config()
        config.optimizer_config()

    def test_example2_grid_complete(self):
        """测试二次OED预设覆盖 4种方法 x 3种估计器"""
        for method in ("fgd", "sgd", "asgd", "rasgd"):
            for estimator in EXAMPLE2_SAMPLES:
                assert f"example2_{method}_{estimator}" in PRESETS

    def test_example2_sample_sizes(self):
        """测试二次OED预设的样本量"""
        config = Config.from_preset("example2_sgd_mc")
        grad = config.gradient_config()
        assert (grad.kind, grad.batch, grad.m_inner) == ("sg_mc", 1, 80)
        full = Config.from_preset("example2_fgd_la").gradient_config()
        assert (full.kind, full.batch) == ("sg_la", 966)
        assert Config.from_preset("example2_fgd_la").optimizer_config().max_ncfm is not None

    def test_timoshenko_cases(self):
        """测试Timoshenko梁四组参数"""
        assert set(TIMOSHENKO_CASES) == set(TIMOSHENKO_OPTIMA) == {1, 2, 3, 4}
        config = Config.from_preset("timoshenko_case3")
        assert config.n_exp == 1
        assert config.optimizer_config().alpha0 == 2.0e5
        assert config.get("prior.units") == "GPa"

    @pytest.mark.parametrize("case", TIMOSHENKO_EIG_REPRODUCIBLE)
    def test_timoshenko_reference_eig(self, case):
        """测试第3、4组的MCLA EIG在初始与最优设计处位于参考值3个标准误内"""
        config = Config.from_preset(f"timoshenko_case{case}")
        initial, optimal = TIMOSHENKO_EIG[case]
        for xi, reference in ((TIMOSHENKO_XI0, initial), (TIMOSHENKO_OPTIMA[case], optimal)):
            estimate = run_estimate(config, xi=xi, seed=0, n_outer=1000)
            assert abs(estimate.value - reference) <= 3.0 * estimate.std_error

    def test_get_preset_is_copy(self):
        """测试获取的预设互不影响"""
        a = get_preset("linear_gaussian")
        a["optimizer"]["alpha0"] = 99.0
        assert get_preset("linear_gaussian")["optimizer"]["alpha0"] == 1.0
        assert a["preset"] == "linear_gaussian"

    def test_unknown_preset(self):
        """测试未知预设"""
        with pytest.raises(ConfigurationError) as exc_info:
            get_preset("example9")
        assert exc_info.value.path == "preset"

    def test_list_presets(self):
        """测试预设列表排序且带说明"""
        names = [name for name, _ in list_presets()]
        assert names == sorted(names)
        assert "example1_deterministic" in names
        assert all(description for _, description in list_presets())


if __name__ == "__main__":
    pytest.main([__file__])
