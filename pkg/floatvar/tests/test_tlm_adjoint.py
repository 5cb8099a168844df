from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from floatvar.utils.assim import AssimProblem
from floatvar.utils.dynamics import Forcing, ModelConfig, PhysParams, project_state, step, tendency
from floatvar.utils.floats import FloatSet, wrap_residual
from floatvar.utils.grid import TWO_PI, Grid, random_state
from floatvar.utils.tlm_adjoint import (
    AdjointState,
    CheckpointException,
    adj_step,
    dot_product_test,
    forward_with_checkpoints,
    gradcheck,
    tendency_ad,
    tendency_tl,
    tlm_step,
    tlm_window,
)
from floatvar.utils.twin import TwinConfig, make_background, synth_obs, truth_run


def small_problem(freeze_theta):
    tc = TwinConfig(
        grid=Grid(8, 8, 5), spinup_steps=20, window_steps=10, floats=4, obs_times=3, background_scale=0.5,
    )
    truth = truth_run(tc)
    obs = synth_obs(truth, tc)
    background = make_background(truth.initial, tc.background_scale)
    return AssimProblem(background, tc.model, tc.window_steps, obs, freeze_theta=freeze_theta)


def relative(a, b):
    return (a - b).norm() / max(a.norm(), b.norm())


class TendencyTangentTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 10, 6)
        self.rng = np.random.default_rng(31)
        self.X = random_state(self.grid, self.rng, amplitude=0.3)
        self.d = random_state(self.grid, self.rng)
        self.l = random_state(self.grid, self.rng)

    def test_tangent_matches_central_difference(self):
        cfg = ModelConfig(dt=0.02)
        eps = 1e-4
        fd = (tendency(self.X + eps * self.d, cfg) - tendency(self.X - eps * self.d, cfg)) * (0.5 / eps)
        self.assertLess(relative(tendency_tl(self.X, self.d, cfg), fd), 1e-7)

    def test_forcing_drops_out_of_the_tangent(self):
        plain = tendency_tl(self.X, self.d, ModelConfig(dt=0.02))
        forced = tendency_tl(self.X, self.d, ModelConfig(dt=0.02, forcing=Forcing("wind", 0.3)))
        np.testing.assert_array_equal(plain.u, forced.u)

    def test_adjoint_is_euclidean_transpose(self):
        for linear in (False, True):
            cfg = ModelConfig(dt=0.02, linear=linear)
            lhs = tendency_tl(self.X, self.d, cfg).euclidean_dot(self.l)
            rhs = self.d.euclidean_dot(tendency_ad(self.X, self.l, cfg))
            self.assertLess(abs(lhs - rhs) / max(abs(lhs), abs(rhs)), 1e-10)


class WindowTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(12, 12, 5)
        self.rng = np.random.default_rng(8)
        self.cfg = ModelConfig(dt=0.02, forcing=Forcing("wind", 0.1))
        self.X0 = project_state(random_state(self.grid, self.rng, amplitude=0.1))
        floats = FloatSet(self.rng.uniform(0, TWO_PI, size=(6, 2)), 0.4)
        self.ck = forward_with_checkpoints(self.X0, self.cfg, 20, floats)

    def test_checkpoints(self):
        self.assertEqual(self.ck.nsteps, 20)
        self.assertEqual(len(self.ck.positions), 21)
        self.assertTrue(self.ck.verify())
        with self.assertRaises(CheckpointException):
            self.ck.check(ModelConfig(dt=0.03))
        with self.assertRaises(CheckpointException):
            self.ck.check(self.cfg, 20)
        self.ck.check(replace(self.cfg))

    def test_mismatched_model_is_rejected(self):
        others = (
            replace(self.cfg, phys=PhysParams(nu=0.05, alpha=0.0)),
            replace(self.cfg, forcing=Forcing("wind", 0.2)),
            replace(self.cfg, forcing=Forcing()),
            replace(self.cfg, linear=True),
        )
        dX = random_state(self.grid, self.rng)
        lam = AdjointState(random_state(self.grid, self.rng))
        for other in others:
            with self.assertRaises(CheckpointException):
                tlm_step(self.ck, 0, dX, None, other)
            with self.assertRaises(CheckpointException):
                adj_step(self.ck, 0, lam, other)

    def test_whole_window_dot_product(self):
        for _ in range(3):
            self.assertLess(dot_product_test(self.ck, self.rng), 1e-12)

    def test_single_step_adjoint(self):
        dX = random_state(self.grid, self.rng)
        dpos = self.rng.normal(size=(6, 2))
        lX = random_state(self.grid, self.rng)
        lpos = self.rng.normal(size=(6, 2))
        out_X, out_pos = tlm_step(self.ck, 5, dX, dpos, self.cfg)
        adj = adj_step(self.ck, 5, AdjointState(lX, lpos), self.cfg)
        lhs = out_X.dot(lX) + np.sum(out_pos * lpos)
        rhs = dX.dot(adj.lam_X) + np.sum(dpos * adj.lam_pos)
        self.assertLess(abs(lhs - rhs) / max(abs(lhs), abs(rhs)), 1e-12)

    def test_tangent_window_matches_finite_difference(self):
        d = random_state(self.grid, self.rng, amplitude=0.1)
        eps = 1e-5
        plus = forward_with_checkpoints(self.X0 + eps * d, self.cfg, 20, self.ck.floats)
        minus = forward_with_checkpoints(self.X0 - eps * d, self.cfg, 20, self.ck.floats)
        dX, dpos, kept = tlm_window(self.ck, d, keep={10, 20})
        fd_X = (plus.states[-1] - minus.states[-1]) * (0.5 / eps)
        self.assertLess(relative(dX, fd_X), 1e-6)
        fd_pos = wrap_residual(plus.positions[-1] - minus.positions[-1]) / (2 * eps)
        np.testing.assert_allclose(dpos, fd_pos, rtol=1e-5, atol=1e-9)
        np.testing.assert_array_equal(kept[20], dpos)
        self.assertIn(10, kept)


class LinearModelTestCase(SimpleTestCase):
    def test_tangent_of_the_linear_model_is_the_model(self):
        grid = Grid(8, 8, 5)
        rng = np.random.default_rng(3)
        cfg = ModelConfig(dt=0.02, linear=True)
        ck = forward_with_checkpoints(random_state(grid, rng, amplitude=0.1), cfg, 1)
        dX = project_state(random_state(grid, rng, amplitude=0.1))
        dX_end, dpos = tlm_step(ck, 0, dX, None, cfg)
        self.assertIsNone(dpos)
        expected = step(dX, cfg)
        for f, g in zip(dX_end.components, expected.components):
            np.testing.assert_allclose(f, g, atol=1e-12)


class GradcheckTestCase(SimpleTestCase):
    def test_gradient_matches_finite_differences(self):
        for freeze_theta in (False, True):
            problem = small_problem(freeze_theta)
            rng = np.random.default_rng(4)
            X0 = problem.xb + random_state(problem.grid, rng, amplitude=0.05)
            rows = gradcheck(X0, problem, rng, directions=3, eps=1e-5)
            self.assertEqual(len(rows), 3)
            for _, analytic, fd, rel in rows:
                self.assertNotEqual(analytic, 0.0)
                self.assertLess(rel, 1e-5)
