import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from floatvar.tests.test_tlm_adjoint import small_problem
from floatvar.utils.assim import (
    AssimException,
    AssimProblem,
    IndefiniteHessianException,
    MinimizerLog,
    assimilate,
    cost,
    hessian_vec,
    inner_solve,
)
from floatvar.utils.dynamics import ModelConfig
from floatvar.utils.floats import FloatSet, FloatsException, ObsSet
from floatvar.utils.grid import Grid, NormParams, StateField, inner, norm_U, random_state
from floatvar.utils.tlm_adjoint import checkpoint_problem


class ProblemTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 8, 5)
        self.xb = StateField.zeros(self.grid)
        self.X = random_state(self.grid, np.random.default_rng(12), amplitude=0.1)

    def problem(self, **kwargs):
        return AssimProblem(self.xb, ModelConfig(), 0, ObsSet.empty(), **kwargs)

    def test_validation(self):
        with self.assertRaises(AssimException):
            self.problem(sigma_u=[1.0, 2.0])
        with self.assertRaises(AssimException):
            self.problem(sigma_v=0.0)
        with self.assertRaises(AssimException):
            self.problem(omega=-1.0)
        with self.assertRaises(AssimException):
            self.problem(jb_norm="h1")
        orphan = ObsSet([0], [1], [[1.0, 1.0]], [1e-3])
        with self.assertRaises(AssimException):
            AssimProblem(self.xb, ModelConfig(), 2, orphan)

    def test_background_cost_uses_variances(self):
        grid, X = self.grid, self.X
        expected = 0.5 * (inner(X.u, X.u, grid) / 4.0 + inner(X.v, X.v, grid) + inner(X.theta, X.theta, grid))
        self.assertAlmostEqual(self.problem(sigma_u=2.0).background_cost(X), expected, delta=1e-12 * expected)

    def test_per_level_variances(self):
        grid, X = self.grid, self.X
        levels = [1.0, 2.0, 2.0, 2.0, 1.0]
        expected = 0.5 * (inner(X.u, X.u, grid) + inner(X.v, X.v, grid) + inner(X.theta, X.theta, grid)) / 4.0
        cost_ = self.problem(sigma_u=levels, sigma_v=levels, sigma_theta=levels).background_cost(X)
        self.assertAlmostEqual(cost_, expected, delta=1e-12 * expected)

    def test_frozen_temperature(self):
        grid, X = self.grid, self.X
        problem = self.problem(freeze_theta=True)
        expected = 0.5 * (inner(X.u, X.u, grid) + inner(X.v, X.v, grid))
        self.assertAlmostEqual(problem.background_cost(X), expected, delta=1e-12 * expected)
        self.assertTrue(np.all(problem.background_gradient(X).theta == 0.0))
        np.testing.assert_array_equal(problem.control_state(X).theta, self.xb.theta)

    def test_u_norm_background(self):
        problem = self.problem(jb_norm="u", norm=NormParams(2, 3.0))
        expected = 0.5 * norm_U(self.X, NormParams(2, 3.0)) ** 2
        self.assertAlmostEqual(problem.background_cost(self.X), expected, delta=1e-12 * expected)

    def test_cost_without_observations(self):
        breakdown = cost(self.X, self.problem(omega=2.0))
        self.assertEqual(breakdown.Jo, 0.0)
        self.assertAlmostEqual(breakdown.J, 2.0 * breakdown.Jb)

    def test_single_float_mismatch(self):
        fs = FloatSet([[1.0, 1.0]], 0.5)
        obs = ObsSet([0], [0], [[0.9, 1.0]], [1e-3], fs)
        problem = AssimProblem(self.xb, ModelConfig(), 0, obs, omega=0.0)
        breakdown = cost(self.xb, problem)
        self.assertAlmostEqual(breakdown.Jo, 0.005, places=12)
        self.assertAlmostEqual(breakdown.J, breakdown.Jo, places=12)


class InnerSolveTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 8, 5)
        self.g = random_state(self.grid, np.random.default_rng(2))

    def test_scaled_identity_converges_in_one_iteration(self):
        delta, records = inner_solve(self.g, lambda d: 2.0 * d, tol=1e-6, max_iter=10)
        self.assertEqual(len(records), 1)
        np.testing.assert_allclose(delta.u, -0.5 * self.g.u, atol=1e-14)
        self.assertAlmostEqual(records[0].qmodel, -0.25 * self.g.dot(self.g), delta=1e-12 * self.g.dot(self.g))

    def test_indefinite_operator(self):
        with self.assertRaises(IndefiniteHessianException):
            inner_solve(self.g, lambda d: -d)

    def test_zero_gradient(self):
        delta, records = inner_solve(StateField.zeros(self.grid), lambda d: d)
        self.assertTrue(delta.is_zero())
        self.assertEqual(records, [])


class MinimizationTestCase(SimpleTestCase):
    def test_hessian_is_symmetric(self):
        problem = small_problem(False)
        rng = np.random.default_rng(6)
        ck = checkpoint_problem(problem.xb, problem)
        a = random_state(problem.grid, rng)
        b = random_state(problem.grid, rng)
        lhs = hessian_vec(a, ck, problem).dot(b)
        rhs = a.dot(hessian_vec(b, ck, problem))
        self.assertLess(abs(lhs - rhs) / max(abs(lhs), abs(rhs)), 1e-9)

    def test_assimilation_reduces_the_cost(self):
        problem = small_problem(True)
        analysis, log = assimilate(problem, outer_loops=2, inner_iters=5)
        self.assertLess(log.best.J, log.initial.J)
        self.assertTrue(log.inner_monotone())
        analysis.check()
        np.testing.assert_array_equal(analysis.theta, problem.xb.theta)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "minlog.csv"
            log.write_csv(path)
            lines = path.read_text().splitlines()
            self.assertEqual(lines[0], "outer,inner,J,Jo,Jb,gnorm,stepnorm,qmodel")
            self.assertEqual(len(lines), len(log.records) + 1)

    def test_monotone_detection(self):
        log = MinimizerLog()
        log.add(0, 0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0)
        log.add(0, 1, 0.5, 0.5, 0.0, 0.5, 0.1, -0.5)
        self.assertTrue(log.inner_monotone())
        log.add(0, 2, 0.8, 0.8, 0.0, 0.4, 0.1, -0.2)
        self.assertFalse(log.inner_monotone())
        log.add(1, 0, 0.4, 0.4, 0.0, 0.1, 0.0, 0.0)
        self.assertEqual(log.best.outer, 1)

    def test_unknown_float_id(self):
        fs = FloatSet([[1.0, 1.0]], 0.5, [3])
        obs = ObsSet([4], [1], [[1.0, 1.0]], [1e-3], fs)
        problem = AssimProblem(StateField.zeros(Grid(8, 8, 5)), ModelConfig(), 2, obs)
        with self.assertRaises(FloatsException):
            cost(problem.xb, problem)
