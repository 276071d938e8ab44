"""
优化器测试
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from oedopt.bayes import NoiseModel, Prior, create_problem
from oedopt.errors import ConfigurationError
from oedopt.gradients import GradientConfig
from oedopt.models import ForwardModel, QuadraticOEDModel, StochasticQuadraticModel
from oedopt.optimizers import (
    STATUS_BUDGET,
    STATUS_CONVERGED,
    STATUS_FAILED,
    STATUS_MAX_ITERS,
    MomentumState,
    OptimizerConfig,
    create_optimizer_config,
    gamma_next,
    lambda_next,
    project,
    restart,
    restart_check,
    run,
    sgd_bound,
    sliding_average,
    step,
    step_size,
)


class NanGradientModel(ForwardModel):
    """解析梯度返回非有限值"""

    has_analytic_gradient = True

    def __init__(self):
        super().__init__(dim_xi=1, d=1, r=1)

    def response(self, xi, theta):
        return np.array([0.0])

    def gradient_xi(self, xi, theta):
        return np.array([[np.nan]])


def example1_problem(sigma=0.01, n=20):
    prior = Prior.fixed(np.zeros(n)) if sigma == 0.0 else Prior.gaussian(np.zeros(n), std=np.full(n, sigma))
    return create_problem(StochasticQuadraticModel(n), prior, NoiseModel.from_std([1.0]))


def quadratic_problem():
    return create_problem(QuadraticOEDModel(), Prior.gaussian([0.0], std=[0.01]), NoiseModel.from_std([0.01]))


DIRECT = GradientConfig(kind="sg_direct", analytic=True)


class TestOptimizerConfig:
    """优化器配置测试"""

    def test_default_schedules(self):
        """测试默认步长策略"""
        assert OptimizerConfig(method="fgd").schedule == "constant"
        assert OptimizerConfig(method="sgd").schedule == "inv_sqrt"

    def test_invalid(self):
        """测试非法配置"""
        with pytest.raises(ConfigurationError) as exc_info:
            OptimizerConfig(method="adam")
        assert exc_info.value.path == "optimizer.method"
        with pytest.raises(ConfigurationError):
            OptimizerConfig(method="fgd", schedule="inv_sqrt")
        with pytest.raises(ConfigurationError):
            OptimizerConfig(alpha0=0.0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(q=1.5)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(restart="never")

    def test_rasgd_forces_zero_q(self):
        """测试rasgd忽略q"""
        assert OptimizerConfig(method="rasgd", q=0.3).q == 0.0
        assert create_optimizer_config("asgd", q=0.3).q == 0.3


class TestMomentum:
    """Nesterov系数测试"""

    @pytest.mark.parametrize("q", [0.0, 0.05, 0.5])
    def test_lambda_recurrence(self, q):
        """测试λ满足递推关系"""
        lam = 1.0
        for _ in range(20):
            nxt = lambda_next(lam, q)
            assert nxt ** 2 == pytest.approx((1.0 - nxt) * lam ** 2 + q * nxt)
            assert 0.0 < nxt <= 1.0
            lam = nxt

    def test_gamma_zero_at_start(self):
        """测试λ=1时γ=0"""
        assert gamma_next(1.0, lambda_next(1.0, 0.0)) == 0.0

    def test_q_one_gives_zero_momentum(self):
        """测试q=1时λ恒为1"""
        assert lambda_next(1.0, 1.0) == 1.0

    def test_restart_resets(self):
        """测试重启重置λ与锚点"""
        state = MomentumState(lam=0.3, z_prev=np.array([1.0]), restart_count=2)
        new = restart(state, np.array([5.0]))
        assert new.lam == 1.0
        np.testing.assert_array_equal(new.z_prev, [5.0])
        assert new.restart_count == 3


class TestStepRules:
    """单步规则测试"""

    def test_step_size(self):
        """测试步长策略"""
        config = OptimizerConfig(method="sgd", alpha0=2.0)
        assert step_size(config, 0) == 2.0
        assert step_size(config, 3) == pytest.approx(1.0)
        assert step_size(OptimizerConfig(method="fgd", alpha0=2.0), 3) == 2.0

    def test_sgd_step_and_projection(self):
        """测试上升方向与盒约束投影"""
        xi, state, gamma = step("sgd", MomentumState(), np.array([1.0, 1.0]), np.array([1.0, -3.0]), 0.5)
        np.testing.assert_allclose(xi, [1.5, -0.5])
        assert gamma == 0.0
        xi, _, _ = step("sgd", MomentumState(), np.array([1.0, 1.0]), np.array([10.0, -10.0]), 1.0, 0.0, -2.0, 2.0)
        np.testing.assert_array_equal(xi, [2.0, -2.0])
        np.testing.assert_array_equal(project(np.array([3.0]), None, None), [3.0])

    def test_accelerated_step(self):
        """测试加速步的外推"""
        state = MomentumState(lam=lambda_next(1.0, 0.0), z_prev=np.array([0.0]))
        xi, new_state, gamma = step("asgd", state, np.array([1.0]), np.array([1.0]), 1.0)
        assert gamma > 0.0
        # z = 2，ξ = z + γ(z - 0)
        np.testing.assert_allclose(xi, [2.0 + 2.0 * gamma])
        np.testing.assert_array_equal(new_state.z_prev, [2.0])

    def test_restart_criteria(self):
        """测试重启准则"""
        xi_k, xi_prev = np.array([1.0, 0.0]), np.array([0.0, 0.0])
        assert restart_check(np.array([-1.0, 0.0]), xi_k, xi_prev)
        assert not restart_check(np.array([1.0, 0.0]), xi_k, xi_prev)
        assert not restart_check(np.array([-1.0, 0.0]), xi_k, None)
        assert restart_check(np.array([1.0, 0.0]), xi_k, xi_prev, "always")
        assert restart_check(None, xi_k, xi_prev, "speed", np.array([-5.0, 0.0]))
        assert not restart_check(None, xi_k, xi_prev, "speed", np.array([-0.5, 0.0]))

    def test_sliding_average(self):
        """测试步长加权滑动平均窗口"""
        xis = np.array([[0.0], [10.0], [20.0], [30.0], [40.0]])
        alphas = [1.0, 1.0, 1.0, 2.0, 1.0]
        # k = 4：窗口 i = 2..4
        np.testing.assert_allclose(sliding_average(xis, alphas, 4), [(20.0 + 60.0 + 40.0) / 4.0])
        np.testing.assert_allclose(sliding_average(xis, alphas, 0), [0.0])

    def test_sgd_bound(self):
        """测试SGD上界"""
        value = sgd_bound([1.0, 1.0, 1.0], 2, diameter=2.0, sigma=1.0, grad_norm=0.0)
        # 窗口 i = 1..2
        assert value == pytest.approx((4.0 + 2.0) / 4.0)


class TestRun:
    """优化循环测试"""

    def test_deterministic_quadratic_converges(self):
        """测试σ=0时固定步长全梯度收敛到 1e-8"""
        problem = example1_problem(0.0)
        config = OptimizerConfig(method="fgd", alpha0=2.0 / 21.0, max_iters=2000, tol=1e-8)
        trace = run(problem, DIRECT, config, np.ones(20), target=np.zeros(20))
        assert trace.status == STATUS_CONVERGED
        assert np.linalg.norm(trace.final_xi) < 1e-8
        assert trace.iterations < 2000
        assert trace.ncfm == trace.iterations

    def test_q_one_equals_sgd_bitwise(self):
        """测试q=1的加速方法与SGD逐位相同"""
        problem = quadratic_problem()
        grad_config = GradientConfig(kind="sg_la")
        sgd = run(problem, grad_config, OptimizerConfig(method="sgd", max_iters=30, seed=3), [1.0, 1.0])
        asgd = run(problem, grad_config, OptimizerConfig(method="asgd", q=1.0, max_iters=30, seed=3), [1.0, 1.0])
        np.testing.assert_array_equal(sgd.xis, asgd.xis)

    def test_forced_restart_equals_sgd_bitwise(self):
        """测试每步重启的rasgd与SGD逐位相同"""
        problem = example1_problem(0.01, 5)
        sgd = run(problem, DIRECT, OptimizerConfig(method="sgd", alpha0=0.3, max_iters=50, seed=1), np.ones(5))
        rasgd = run(
            problem, DIRECT, OptimizerConfig(method="rasgd", alpha0=0.3, max_iters=50, seed=1, restart="always"),
            np.ones(5),
        )
        np.testing.assert_array_equal(sgd.xis, rasgd.xis)
        assert rasgd.restarts == 50

    def test_seed_reproducible(self):
        """测试相同种子轨迹相同"""
        problem = example1_problem(0.01, 5)
        config = OptimizerConfig(method="rasgd", alpha0=0.3, max_iters=40, seed=8)
        a = run(problem, DIRECT, config, np.ones(5))
        b = run(problem, DIRECT, config, np.ones(5))
        np.testing.assert_array_equal(a.xis, b.xis)
        c = run(problem, DIRECT, OptimizerConfig(method="rasgd", alpha0=0.3, max_iters=40, seed=9), np.ones(5))
        assert not np.array_equal(a.xis, c.xis)

    def test_restart_beats_sgd_on_stochastic_quadratic(self):
        """测试σ=0.01时rasgd达到 1e-2 的中位迭代次数少于SGD"""
        problem = example1_problem(0.01)
        counts = {}
        for method in ("sgd", "rasgd"):
            iterations = []
            for seed in range(5):
                config = OptimizerConfig(method=method, alpha0=2.0 / 21.0, max_iters=20000, seed=seed, tol=1e-2)
                trace = run(problem, DIRECT, config, np.ones(20), target=np.zeros(20))
                assert trace.status == STATUS_CONVERGED
                iterations.append(trace.iterations)
            counts[method] = np.median(iterations)
        assert counts["rasgd"] < counts["sgd"]

    def test_quadratic_oed_reaches_optimum(self):
        """测试二次OED模型上rasgd+sg_la收敛到原点"""
        problem = quadratic_problem()
        config = OptimizerConfig(method="rasgd", alpha0=1.0, max_iters=100000, max_ncfm=500000, seed=0, tol=0.01)
        trace = run(problem, GradientConfig(kind="sg_la"), config, [1.0, 1.0], target=[0.0, 0.0])
        assert trace.status == STATUS_CONVERGED
        assert np.linalg.norm(trace.final_xi) <= 0.01
        assert trace.ncfm == problem.model.eval_counter

    def test_budget_stop(self):
        """测试NCFM预算终止"""
        problem = quadratic_problem()
        config = OptimizerConfig(method="sgd", max_iters=1000, max_ncfm=30)
        trace = run(problem, GradientConfig(kind="sg_la"), config, [1.0, 1.0])
        assert trace.status == STATUS_BUDGET
        assert trace.ncfm == 30
        assert trace.iterations == 5

    def test_max_iters_stop(self):
        """测试迭代上限终止"""
        trace = run(example1_problem(0.01, 3), DIRECT, OptimizerConfig(method="sgd", max_iters=7), np.ones(3))
        assert trace.status == STATUS_MAX_ITERS
        assert trace.iterations == 7
        assert len(trace.rows) == 8

    def test_gradient_failure(self):
        """测试非有限梯度使运行失败而不抛出"""
        problem = create_problem(NanGradientModel(), Prior.gaussian([0.0], std=[1.0]), NoiseModel.from_std([1.0]))
        trace = run(problem, DIRECT, OptimizerConfig(method="sgd", max_iters=5), [0.0])
        assert trace.status == STATUS_FAILED
        assert not trace.succeeded
        assert "非有限" in trace.message

    def test_initial_design_outside_box(self):
        """测试初始设计越界"""
        with pytest.raises(ConfigurationError) as exc_info:
            run(quadratic_problem(), GradientConfig(), OptimizerConfig(), [3.0, 0.0])
        assert exc_info.value.path == "optimizer.xi0"


class TestScriptedIterations:
    """与手工迭代对照的确定性场景"""

    def test_asgd_matches_hand_iteration(self):
        """测试确定性二次函数上 α=2/21、q=1/20 的加速步与手工迭代前5步一致"""
        problem = example1_problem(0.0)
        alpha, q = 2.0 / 21.0, 1.0 / 20.0
        config = OptimizerConfig(method="asgd", alpha0=alpha, q=q, schedule="constant", max_iters=5)
        trace = run(problem, DIRECT, config, np.ones(20))
        assert trace.iterations == 5

        diag = np.arange(1.0, 21.0)
        xi, z_prev, lam = np.ones(20), np.ones(20), 1.0
        expected = [xi.copy()]
        for _ in range(5):
            z = xi + alpha * (-diag * xi)
            b = lam * lam - q
            lam_new = 0.5 * (-b + np.sqrt(b * b + 4.0 * lam * lam))
            assert lam_new ** 2 == pytest.approx((1.0 - lam_new) * lam ** 2 + q * lam_new, rel=1e-12)
            gamma = lam * (1.0 - lam) / (lam * lam + lam_new)
            xi = z + gamma * (z - z_prev)
            z_prev, lam = z, lam_new
            expected.append(xi.copy())
        np.testing.assert_allclose(trace.xis, np.array(expected), rtol=1e-12, atol=1e-13)

    def test_overshoot_triggers_restart(self):
        """测试一维二次上升越过最大值后梯度准则触发重启"""
        problem = example1_problem(0.0, 1)
        config = OptimizerConfig(method="rasgd", alpha0=0.9, schedule="constant", max_iters=50, restart="gradient")
        trace = run(problem, DIRECT, config, [1.0])
        xis = trace.xis[:, 0]
        # ξ_1 = 0.1，动量外推使 ξ_2 越过最大值 0
        assert xis[1] == pytest.approx(0.1)
        assert xis[2] < 0.0
        assert not trace.rows[1].restart
        assert not trace.rows[2].restart
        assert trace.rows[3].restart
        assert trace.restarts >= 1

        plain = run(problem, DIRECT, replace(config, method="asgd"), [1.0])
        assert plain.restarts == 0
        assert not any(row.restart for row in plain.rows)


class TestTrace:
    """轨迹记录测试"""

    def setup_method(self):
        """测试前准备"""
        problem = example1_problem(0.01, 3)
        self.trace = run(problem, DIRECT, OptimizerConfig(method="rasgd", alpha0=0.3, max_iters=25, seed=2), np.ones(3))

    def test_sliding_average_matches(self):
        """测试在线滑动平均与直接计算一致"""
        for row in self.trace.rows:
            np.testing.assert_allclose(row.xibar, self.trace.sliding_average(row.k), rtol=1e-10, atol=1e-12)

    def test_ncfm_monotone(self):
        """测试累计NCFM单调"""
        ncfm = [row.ncfm for row in self.trace.rows]
        assert ncfm == sorted(ncfm)
        assert ncfm[0] == 0

    def test_csv_columns(self):
        """测试CSV表头"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = self.trace.save_csv(Path(temp_dir) / "trace.csv")
            frame = pd.read_csv(path)
        assert list(frame.columns) == [
            "k", "xi_0", "xi_1", "xi_2", "xibar_0", "xibar_1", "xibar_2",
            "alpha", "gamma", "restart", "grad_norm", "ncfm",
        ]
        assert len(frame) == 26


if __name__ == "__main__":
    pytest.main([__file__])
