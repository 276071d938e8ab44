"""
配置模块测试
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from oedopt.config import Config, get_config, reload_config
from oedopt.errors import ConfigurationError


class TestConfig:
    """配置类测试"""

    def test_default_config(self):
        """测试默认配置加载"""
        with tempfile.TemporaryDirectory() as temp_dir:
            # 创建一个不存在的配置文件路径
            config_path = os.path.join(temp_dir, "nonexistent.yaml")
            config = Config(config_path)

            assert config.get("model.name") == "example2_quadratic_oed"
            assert config.optimizer.method == "rasgd"
            assert config.replications == 10
            assert config.validate() == []

    def test_strict_missing_file(self):
        """测试严格模式下文件缺失"""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(ConfigurationError) as exc_info:
                Config(os.path.join(temp_dir, "missing.yaml"), strict=True)
            assert exc_info.value.path == "--config"

    def test_config_loading(self):
        """测试配置文件加载与预设合并"""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_file = Path(temp_dir) / "test_config.yaml"
            config_content = """
preset: example2_rasgd_la
optimizer:
  alpha0: 0.5
run:
  seed: 12
"""
            config_file.write_text(config_content, encoding="utf-8")

            config = Config(str(config_file))

            assert config.preset_name == "example2_rasgd_la"
            assert config.optimizer.alpha0 == 0.5
            assert config.gradient.kind == "sg_la"
            assert config.seed == 12
            assert config.optimizer_config().alpha0 == 0.5

    @patch.dict(os.environ, {"TEST_SEED": "7"})
    def test_env_var_replacement(self):
        """测试环境变量替换"""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_file = Path(temp_dir) / "test_config.yaml"
            config_file.write_text('run:\n  seed: "${TEST_SEED}"\n', encoding="utf-8")

            config = Config(str(config_file))

            assert config.seed == 7

    def test_config_get_set(self):
        """测试配置获取和设置"""
        config = Config.from_dict({})

        assert config.get("nonexistent.key", "default") == "default"
        config.set("test.nested.key", "test_value")
        assert config.get("test.nested.key") == "test_value"
        config.set("run.seed", 3)
        assert config.seed == 3

    def test_config_validation(self):
        """测试配置验证给出带路径的错误"""
        config = Config.from_dict({"model": {"name": "foo"}, "run": {"replications": 0, "seed": -1}})

        errors = config.validate()

        assert "未知的模型名称: foo (model.name)" in errors
        assert any("run.replications" in error for error in errors)
        assert any("run.seed" in error for error in errors)

    def test_dimension_validation(self):
        """测试设计向量维度检查"""
        config = Config.from_dict({"optimizer": {"xi0": [1.0, 1.0, 1.0]}})
        assert any("optimizer.xi0" in error for error in config.validate())

    def test_invalid_section_values(self):
        """测试非法数值"""
        config = Config.from_dict({"estimator": {"n_outer": 1.5}})
        with pytest.raises(ConfigurationError) as exc_info:
            config.estimator_config()
        assert exc_info.value.path == "estimator.n_outer"
        config = Config.from_dict({"prior": {"units": "kPa"}})
        assert any("prior.units" in error for error in config.validate())

    @patch.dict(os.environ, {"OEDOPT_LOG_LEVEL": "DEBUG"})
    def test_env_override(self):
        """测试环境变量覆盖"""
        config = Config.from_dict({"logging": {"level": "WARNING"}})

        # 环境变量应该覆盖配置文件
        assert config.logging_level == "DEBUG"
        assert config.logging_file_path is None
        assert config.logging_max_file_size == 10


class TestConfigBuilders:
    """由配置构造对象的测试"""

    def test_prior_units_gpa(self):
        """测试GPa先验换算为MPa"""
        config = Config.from_preset("timoshenko_case1")
        prior = config.build_prior()
        np.testing.assert_allclose(prior.mean, [30000.0, 11540.0])
        np.testing.assert_allclose(np.sqrt(np.diag(prior.cov)), [9000.0, 3460.0])
        assert config.prior_unit_scale == 1000.0

    def test_problem(self):
        """测试问题构造"""
        problem = Config.from_preset("timoshenko_case1").build_problem()
        assert problem.n_exp == 3
        assert problem.model.name == "timoshenko"
        np.testing.assert_allclose(np.sqrt(np.diag(problem.noise.cov)), [6.25e-4, 1.30e-4])

    def test_estimator_overrides(self):
        """测试估计器配置覆盖"""
        config = Config.from_preset("example2_rasgd_mcis")
        est = config.estimator_config(n_outer=10)
        assert est.kind == "dlmcis"
        assert est.n_outer == 10
        assert est.m_inner == 7

    def test_uniform_and_cov_priors(self):
        """测试均匀先验与显式协方差"""
        config = Config.from_dict({"prior": {"kind": "uniform", "lo": [-1.0], "hi": [1.0]}})
        assert config.build_prior().kind == "uniform"
        config = Config.from_dict({"prior": {"kind": "gaussian", "mean": [0.0], "cov": [[4.0]]}})
        assert config.build_prior().cov[0, 0] == 4.0
        config = Config.from_dict({"prior": {"kind": "beta"}})
        with pytest.raises(ConfigurationError):
            config.build_prior()

    def test_design_defaults_to_xi0(self):
        """测试估计设计点缺省为初始设计"""
        config = Config.from_dict({})
        np.testing.assert_array_equal(config.design(), [1.0, 1.0])
        config.set("run.xi", [0.5, 0.0])
        np.testing.assert_array_equal(config.design(), [0.5, 0.0])
        assert config.target() is None


def test_global_config():
    """测试全局配置"""
    # 重置全局配置
    reload_config()

    config1 = get_config()
    config2 = get_config()

    # 应该是同一个实例
    assert config1 is config2


if __name__ == "__main__":
    pytest.main([__file__])
