import numpy as np
import pytest
from scipy import optimize

from bknni.raking import (CalibrationError, NoConvergence, RakingSolution,
                          SingularJacobian, rake)


class TestRake:
    def test_constant_column_fixed_point(self):
        d = np.array([1.0, 2.0, 3.0])
        x = np.ones((3, 1))
        sol = rake(d, x, np.array([6.0]))
        assert sol.lam == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sol.weights, d)

    def test_single_unit_hand_solution(self):
        # 2 * exp(3 lam) * 3 = 12  =>  lam = ln(2)/3, w = 4
        sol = rake(np.array([2.0]), np.array([[3.0]]), np.array([12.0]))
        assert sol.lam[0] == pytest.approx(np.log(2.0) / 3.0, rel=1e-9)
        assert sol.weights[0] == pytest.approx(4.0, rel=1e-9)

    def test_current_totals_give_zero_lambda(self):
        rng = np.random.default_rng(1)
        d = rng.uniform(0.5, 2.0, 10)
        x = np.column_stack([np.ones(10), rng.normal(size=10)])
        sol = rake(d, x, x.T @ d)
        assert np.max(np.abs(sol.lam)) <= 1e-10

    def test_residual_bound_on_success(self):
        rng = np.random.default_rng(2)
        d = rng.uniform(0.5, 2.0, 30)
        x = np.column_stack([np.ones(30), rng.normal(size=30),
                             rng.uniform(1, 3, 30)])
        target = x.T @ (d * rng.uniform(0.8, 1.25, 30))
        sol = rake(d, x, target)
        f = x.T @ sol.weights - target
        assert np.max(np.abs(f) / np.abs(target)) <= 1e-10

    def test_positivity(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(0.1, 1.0, 20)
        x = np.column_stack([np.ones(20), rng.normal(size=20)])
        target = x.T @ d * np.array([1.4, 0.7])
        sol = rake(d, x, target)
        assert np.all(sol.weights > 0)

    def test_zero_initial_weight_stays_zero(self):
        d = np.array([0.0, 1.0, 2.0])
        x = np.column_stack([np.ones(3), [1.0, 2.0, 3.0]])
        target = np.array([3.5, 9.0])
        sol = rake(d, x, target)
        assert sol.weights[0] == 0.0

    def test_matches_convex_dual_oracle(self):
        # raking lambda minimizes sum_i d_i exp(lam'x_i) - lam'target
        rng = np.random.default_rng(4)
        d = rng.uniform(0.5, 2.0, 25)
        x = np.column_stack([np.ones(25), rng.normal(size=25)])
        target = x.T @ (d * rng.uniform(0.9, 1.2, 25))
        sol = rake(d, x, target)

        def dual(lam):
            return float(np.sum(d * np.exp(x @ lam)) - lam @ target)

        res = optimize.minimize(dual, np.zeros(2), method="BFGS",
                                options={"gtol": 1e-12})
        np.testing.assert_allclose(sol.lam, res.x, atol=1e-6)

    def test_unreachable_target_fails_typed(self):
        # positive weights cannot produce a negative total of a positive x
        d = np.ones(3)
        x = np.array([[1.0], [1.0], [1.0]])
        with pytest.raises((SingularJacobian, NoConvergence)):
            rake(d, x, np.array([-5.0]))

    def test_no_convergence_reports_iterations(self):
        d = np.ones(4)
        x = np.column_stack([np.ones(4), [1.0, 2.0, 3.0, 4.0]])
        target = x.T @ d * 1.7
        with pytest.raises(NoConvergence) as exc:
            rake(d, x, target, max_iter=1)
        assert exc.value.iterations == 1
        assert exc.value.residual > 0

    def test_negative_weights_rejected(self):
        with pytest.raises(CalibrationError):
            rake(np.array([-1.0]), np.array([[1.0]]), np.array([1.0]))

    def test_solution_dataclass_fields(self):
        sol = rake(np.array([2.0]), np.array([[1.0]]), np.array([4.0]))
        assert isinstance(sol, RakingSolution)
        assert sol.iterations >= 1 and sol.residual <= 1e-10
