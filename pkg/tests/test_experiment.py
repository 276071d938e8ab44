"""
实验编排测试
"""

import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from ruamel.yaml import YAML

from oedopt.config import Config
from oedopt.errors import ConfigurationError
from oedopt.experiment import (
    contour_grid,
    run_contour,
    run_estimate,
    run_gradcheck,
    run_minibatch_study,
    run_optimize,
    save_yaml,
)


def load_yaml(path):
    with open(path, "r", encoding="utf-8") as f:
        return YAML(typ="safe").load(f)


class TestEstimate:
    """固定设计估计测试"""

    def test_linear_gaussian_matches_analytic(self):
        """测试线性高斯预设与解析EIG一致"""
        config = Config.from_preset("linear_gaussian")
        with tempfile.TemporaryDirectory() as temp_dir:
            estimate = run_estimate(config, out_dir=temp_dir)
            document = load_yaml(Path(temp_dir) / "estimate.yaml")
        assert abs(estimate.value - 0.5 * np.log(5.0)) <= 3.0 * estimate.std_error
        assert document["kind"] == "mcla"
        assert document["preset"] == "linear_gaussian"
        assert document["ncfm"] == estimate.ncfm

    def test_null_experiment(self):
        """测试与参数无关的实验EIG为零"""
        config = Config.from_preset("null_experiment")
        estimate = run_estimate(config, xi=[0.3], kind="dlmc", n_outer=50, m_inner=10)
        assert estimate.value == pytest.approx(0.0, abs=1e-10)

    def test_save_yaml_converts_numpy(self):
        """测试numpy类型写入YAML"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_yaml({"a": np.float64(1.5), "b": np.arange(3), "c": {"d": np.int64(2)}}, Path(temp_dir) / "x.yaml")
            assert load_yaml(path) == {"a": 1.5, "b": [0, 1, 2], "c": {"d": 2}}


class TestOptimize:
    """重复优化测试"""

    def test_deterministic_example(self):
        """测试确定性二次函数收敛并写出报告"""
        config = Config.from_preset("example1_deterministic")
        with tempfile.TemporaryDirectory() as temp_dir:
            report = run_optimize(config, out_dir=temp_dir)
            document = load_yaml(Path(temp_dir) / "report.yaml")
            trace = pd.read_csv(Path(temp_dir) / "trace_00.csv")
            table = pd.read_csv(Path(temp_dir) / "replications.csv")
        assert len(report.replications) == 1
        assert report.replications[0].converged
        assert np.linalg.norm(report.replications[0].xi) <= 1e-8
        assert report.eig_initial is None
        assert document["aggregate"]["replications"] == 1
        assert document["aggregate"]["mean_ncfm"] == report.mean_ncfm
        assert len(trace) == report.replications[0].iterations + 1
        assert table["ncfm"].mean() == report.mean_ncfm

    def test_worker_count_independent(self):
        """测试并行重复结果与线程数无关"""
        config = Config.from_preset("example1_rasgd")
        config.set("optimizer.max_iters", 60)
        serial = run_optimize(config, replications=3, workers=1, evaluate_eig=False)
        parallel = run_optimize(config, replications=3, workers=3, evaluate_eig=False)
        for a, b in zip(serial.replications, parallel.replications):
            np.testing.assert_array_equal(a.xi, b.xi)
            assert a.ncfm == b.ncfm
        assert len({tuple(r.xi) for r in serial.replications}) == 3

    def test_quadratic_oed_improves_eig(self):
        """测试二次OED优化后EIG增加、后验标准差减小"""
        config = Config.from_preset("example2_rasgd_la")
        report = run_optimize(config, replications=2)
        assert report.failures == 0
        assert all(r.converged for r in report.replications)
        assert report.eig_final.value > report.eig_initial.value
        assert report.posterior_std_final[0] < report.posterior_std_initial[0]
        assert report.median_ncfm <= config.optimizer_config().max_ncfm

    def test_budget_override(self):
        """测试预算覆盖"""
        config = Config.from_preset("example2_sgd_mc")
        report = run_optimize(config, replications=1, budget=500, evaluate_eig=False)
        assert report.replications[0].status == "budget"
        assert report.replications[0].ncfm < 500 + 3 * 81


class TestGradcheck:
    """梯度检查测试"""

    def test_quadratic_oed(self):
        """测试二次OED上sg_la与MCLA差分一致"""
        config = Config.from_preset("example2_rasgd_la")
        config.set("gradcheck.n_outer", 200)
        config.set("gradcheck.m_inner", 20)
        config.set("gradcheck.n_fixed", 5)
        with tempfile.TemporaryDirectory() as temp_dir:
            report = run_gradcheck(config, points=[[1.0, 0.5]], out_dir=temp_dir)
            assert (Path(temp_dir) / "gradcheck.yaml").exists()
        assert report["max_la_vs_fd"] < 1e-3
        assert report["fixed_theta_checks"] == 5
        assert report["fixed_theta_max_error"] < 1e-3
        assert np.isfinite(report["points"][0]["full_norm"])

    def test_linear_gaussian_zero_gradient(self):
        """测试线性高斯模型的sg_la梯度恒为零"""
        config = Config.from_preset("linear_gaussian")
        config.set("gradcheck.n_outer", 50)
        config.set("gradcheck.m_inner", 5)
        report = run_gradcheck(config)
        np.testing.assert_allclose(report["points"][0]["sg_la_mean"], [0.0], atol=1e-12)
        np.testing.assert_allclose(report["points"][0]["mcla_fd"], [0.0], atol=1e-12)


class TestContour:
    """等值线网格测试"""

    def test_grid_finite(self):
        """测试二次OED网格处处有限"""
        config = Config.from_preset("example2_rasgd_la")
        config.set("contour.nx", 5)
        config.set("contour.ny", 5)
        config.set("contour.n_outer", 20)
        with tempfile.TemporaryDirectory() as temp_dir:
            frame = run_contour(config, out_dir=temp_dir)
            written = pd.read_csv(Path(temp_dir) / "contour.csv")
        assert len(frame) == 25
        assert list(written.columns) == ["xi_0", "xi_1", "eig", "std_error"]
        assert np.all(np.isfinite(frame["eig"]))
        best = frame.loc[frame["eig"].idxmax()]
        assert (best["xi_0"], best["xi_1"]) == (0.0, 0.0)

    def test_single_point_equals_estimate(self):
        """测试单点网格等于固定设计估计"""
        config = Config.from_preset("example2_rasgd_la")
        config.set("contour.x_range", [0.5, 0.5])
        config.set("contour.y_range", [-1.0, -1.0])
        config.set("contour.nx", 1)
        config.set("contour.ny", 1)
        config.set("contour.n_outer", 30)
        frame = run_contour(config)
        estimate = run_estimate(config, xi=[0.5, -1.0], kind="mcla", n_outer=30)
        assert frame["eig"].iloc[0] == estimate.value

    def test_default_range_from_bounds(self):
        """测试缺省范围取模型边界"""
        config = Config.from_dict({"contour": {"x_range": None, "y_range": None, "nx": 3, "ny": 2}})
        x, y = contour_grid(config)
        np.testing.assert_array_equal(x, [-2.0, 0.0, 2.0])
        np.testing.assert_array_equal(y, [-2.0, 2.0])


class TestMinibatchStudy:
    """小批量研究测试"""

    def test_rows_and_budget(self):
        """测试每个批大小与重复各一行且不超预算"""
        config = Config.from_preset("example1_sgd")
        with tempfile.TemporaryDirectory() as temp_dir:
            frame = run_minibatch_study(config, batches=(1, 5), replications=2, budget=100, out_dir=temp_dir)
            assert (Path(temp_dir) / "minibatch.csv").exists()
        assert len(frame) == 4
        assert set(frame["batch"]) == {1, 5}
        assert frame["ncfm"].max() <= 100
        assert np.all(np.isfinite(frame["error_avg"]))

    def test_requires_target(self):
        """测试需要已知最优设计"""
        with pytest.raises(ConfigurationError) as exc_info:
            run_minibatch_study(Config.from_preset("timoshenko_case1"), budget=10)
        assert exc_info.value.path == "optimizer.target"


if __name__ == "__main__":
    pytest.main([__file__])
