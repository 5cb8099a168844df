import numpy as np
from django.test import SimpleTestCase

from floatvar.utils.grid import (
    TWO_PI,
    Grid,
    GridException,
    NormParams,
    StateField,
    cumulative_vertical_integral,
    cumulative_vertical_integral_transpose,
    grad_2m_sq,
    horizontal_derivative,
    horizontal_derivative_transpose,
    inner,
    laplacian,
    laplacian_transpose,
    norm_2m_sq,
    norm_U,
    norm_U_sq_gradient,
    random_state,
    vertical_derivative,
    vertical_derivative_transpose,
    weighted_adjoint,
)


def transpose_defect(op, op_t, shape, rng):
    f = rng.normal(size=shape)
    g = rng.normal(size=shape)
    lhs = np.sum(op(f) * g)
    rhs = np.sum(f * op_t(g))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)


class GridTestCase(SimpleTestCase):
    def test_rejects_degenerate_grids(self):
        with self.assertRaises(GridException):
            Grid(3, 8, 5)
        with self.assertRaises(GridException):
            Grid(8, 8, 2)
        with self.assertRaises(GridException):
            Grid(8, 8, 5, a=0.0)

    def test_spacing_and_weights(self):
        grid = Grid(16, 8, 9, a=2.0)
        self.assertAlmostEqual(grid.dx, TWO_PI / 16)
        self.assertAlmostEqual(grid.dz, 0.25)
        self.assertEqual(grid.level_weights[0], 0.125)
        self.assertEqual(grid.level_weights[4], 0.25)
        # trapezoid weights integrate 1 to the volume of T^2 x (0, a)
        self.assertAlmostEqual(grid.weights.sum(), TWO_PI ** 2 * 2.0, places=10)

    def test_interior_mask(self):
        grid = Grid(8, 8, 5)
        self.assertEqual(grid.interior.shape, (1, 1, 5))
        self.assertEqual(list(grid.interior.ravel()), [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_check_stencil(self):
        grid = Grid(8, 8, 5)
        grid.check_stencil(4)
        with self.assertRaises(GridException):
            grid.check_stencil(5)


class OperatorTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 12, 7, a=1.5)
        self.rng = np.random.default_rng(11)

    def test_centered_derivative_of_sine(self):
        X, Y, _ = self.grid.mesh
        d = horizontal_derivative(np.sin(X), self.grid, "x")
        factor = np.sin(self.grid.dx) / self.grid.dx
        np.testing.assert_allclose(d, factor * np.cos(X), atol=1e-13)
        d = horizontal_derivative(np.cos(2 * Y), self.grid, "y")
        factor = np.sin(2 * self.grid.dy) / self.grid.dy
        np.testing.assert_allclose(d, -factor * np.sin(2 * Y), atol=1e-13)

    def test_vertical_derivative_is_exact_on_linear_profiles(self):
        _, _, Z = self.grid.mesh
        np.testing.assert_allclose(vertical_derivative(3.0 * Z - 1.0, self.grid), 3.0, atol=1e-12)
        self.assertFalse(np.any(vertical_derivative(np.full(self.grid.shape, 2.5), self.grid)))

    def test_vertical_derivative_without_boundaries(self):
        _, _, Z = self.grid.mesh
        d = vertical_derivative(Z, self.grid, boundaries=False)
        self.assertFalse(np.any(d[..., 0]))
        self.assertFalse(np.any(d[..., -1]))
        np.testing.assert_allclose(d[..., 1:-1], 1.0, atol=1e-12)

    def test_cumulative_integral_of_one_is_z(self):
        ones = np.ones(self.grid.shape)
        _, _, Z = self.grid.mesh
        integral = cumulative_vertical_integral(ones, self.grid)
        self.assertEqual(integral[0, 0, 0], 0.0)
        np.testing.assert_allclose(integral, Z, atol=1e-13)

    def test_laplacian_vanishes_on_z_boundaries(self):
        f = self.rng.normal(size=self.grid.shape)
        out = laplacian(f, self.grid)
        self.assertFalse(np.any(out[..., 0]))
        self.assertFalse(np.any(out[..., -1]))

    def test_euclidean_transposes(self):
        grid, shape = self.grid, self.grid.shape
        pairs = [
            (lambda f: horizontal_derivative(f, grid, "x"), lambda g: horizontal_derivative_transpose(g, grid, "x")),
            (lambda f: horizontal_derivative(f, grid, "y", 2), lambda g: horizontal_derivative_transpose(g, grid, "y", 2)),
            (lambda f: vertical_derivative(f, grid), lambda g: vertical_derivative_transpose(g, grid)),
            (
                lambda f: vertical_derivative(f, grid, boundaries=False),
                lambda g: vertical_derivative_transpose(g, grid, boundaries=False),
            ),
            (lambda f: cumulative_vertical_integral(f, grid), lambda g: cumulative_vertical_integral_transpose(g, grid)),
            (lambda f: laplacian(f, grid), lambda g: laplacian_transpose(g, grid)),
        ]
        for op, op_t in pairs:
            self.assertLess(transpose_defect(op, op_t, shape, self.rng), 1e-13)

    def test_weighted_adjoint(self):
        grid = self.grid
        f = self.rng.normal(size=grid.shape)
        g = self.rng.normal(size=grid.shape)
        lhs = inner(vertical_derivative(f, grid), g, grid)
        rhs = inner(f, weighted_adjoint(lambda h: vertical_derivative_transpose(h, grid), g, grid), grid)
        self.assertAlmostEqual(lhs, rhs, delta=1e-12 * max(1.0, abs(lhs)))


class StateFieldTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 8, 5)
        self.rng = np.random.default_rng(3)

    def test_check_rejects_boundary_values(self):
        X = StateField.zeros(self.grid)
        X.check()
        X.u[0, 0, 0] = 1.0
        with self.assertRaises(GridException):
            X.check()

    def test_arithmetic(self):
        A = random_state(self.grid, self.rng)
        B = random_state(self.grid, self.rng)
        C = 2.0 * A - B + (-A)
        np.testing.assert_allclose(C.u, A.u - B.u)
        self.assertAlmostEqual(A.dot(B), B.dot(A))
        self.assertTrue((A - A).is_zero())

    def test_random_state_is_masked_and_seeded(self):
        A = random_state(self.grid, np.random.default_rng(5))
        B = random_state(self.grid, np.random.default_rng(5))
        A.check()
        for f, g in zip(A.components, B.components):
            np.testing.assert_array_equal(f, g)


class NormTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(8, 8, 5)
        self.rng = np.random.default_rng(7)

    def test_norm_params_validation(self):
        with self.assertRaises(GridException):
            NormParams(m=1)
        with self.assertRaises(GridException):
            NormParams(K=0.0)

    def test_zero_state_has_zero_norms(self):
        X = StateField.zeros(self.grid)
        self.assertEqual(norm_2m_sq(X, NormParams()), 0.0)
        self.assertEqual(norm_U(X, NormParams()), 0.0)

    def test_temperature_weight(self):
        X = random_state(self.grid, self.rng)
        only_theta = StateField(self.grid, self.grid.zeros(), self.grid.zeros(), X.theta)
        one = norm_2m_sq(only_theta, NormParams(2, 1.0))
        three = norm_2m_sq(only_theta, NormParams(2, 3.0))
        self.assertAlmostEqual(three, 3.0 * one, delta=1e-12 * three)
        self.assertAlmostEqual(
            grad_2m_sq(only_theta, NormParams(2, 3.0)),
            3.0 * grad_2m_sq(only_theta, NormParams(2, 1.0)),
            delta=1e-10 * three,
        )

    def test_norm_U_gradient_matches_central_difference(self):
        params = NormParams(2, 2.0)
        X = random_state(self.grid, self.rng)
        d = random_state(self.grid, self.rng)
        g = norm_U_sq_gradient(X, params)
        eps = 1e-3
        plus = 0.5 * norm_U(X + eps * d, params) ** 2
        minus = 0.5 * norm_U(X - eps * d, params) ** 2
        fd = (plus - minus) / (2 * eps)
        self.assertAlmostEqual(g.dot(d), fd, delta=1e-8 * abs(fd))


class QuadratureOracleTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = Grid(4, 4, 33)
        _, _, self.Z = self.grid.mesh

    def test_vertical_derivative_of_parabola(self):
        d = vertical_derivative(self.Z * (1.0 - self.Z), self.grid)
        self.assertLessEqual(np.max(np.abs(d - (1.0 - 2.0 * self.Z))[..., 1:-1]), 0.01)

    def test_cumulative_integral_of_z(self):
        integral = cumulative_vertical_integral(self.Z, self.grid)
        self.assertLessEqual(np.max(np.abs(integral - 0.5 * self.Z ** 2)), 1e-3)


def centered_by_loops(f, axis, h):
    out = np.empty_like(f)
    n = f.shape[axis]
    for index in np.ndindex(f.shape):
        up, down = list(index), list(index)
        up[axis] = (index[axis] + 1) % n
        down[axis] = (index[axis] - 1) % n
        out[index] = (f[tuple(up)] - f[tuple(down)]) / (2.0 * h)
    return out


def vertical_by_loops(f, dz):
    out = np.empty_like(f)
    last = f.shape[2] - 1
    for i, j, k in np.ndindex(f.shape):
        if k == 0:
            out[i, j, k] = (-3.0 * f[i, j, 0] + 4.0 * f[i, j, 1] - f[i, j, 2]) / (2.0 * dz)
        elif k == last:
            out[i, j, k] = (3.0 * f[i, j, k] - 4.0 * f[i, j, k - 1] + f[i, j, k - 2]) / (2.0 * dz)
        else:
            out[i, j, k] = (f[i, j, k + 1] - f[i, j, k - 1]) / (2.0 * dz)
    return out


class DirectSumTestCase(SimpleTestCase):
    def test_derivatives_commute_with_grid_shifts(self):
        grid = Grid(8, 10, 5)
        f = random_state(grid, np.random.default_rng(17)).u
        for axis, name in ((0, "x"), (1, "y")):
            for k in (1, 3, -2):
                shifted = horizontal_derivative(np.roll(f, k, axis=axis), grid, name)
                np.testing.assert_array_equal(shifted, np.roll(horizontal_derivative(f, grid, name), k, axis=axis))

    def test_norm_U_matches_a_direct_sum(self):
        grid = Grid(8, 4, 5)
        X, _, Z = grid.mesh
        u = np.sin(X) * np.sin(np.pi * Z / grid.a)
        state = StateField(grid, u, grid.zeros(), grid.zeros())

        total = 0.0
        for g in (u, centered_by_loops(u, 0, grid.dx), centered_by_loops(u, 1, grid.dy), vertical_by_loops(u, grid.dz)):
            for i in range(3):
                for j in range(3 - i):
                    d = g
                    for _ in range(i):
                        d = centered_by_loops(d, 0, grid.dx)
                    for _ in range(j):
                        d = centered_by_loops(d, 1, grid.dy)
                    for a, b, k in np.ndindex(d.shape):
                        q = grid.dz / 2 if k in (0, grid.nz - 1) else grid.dz
                        total += grid.dx * grid.dy * q * d[a, b, k] ** 2
        value = norm_U(state, NormParams(2, 1.0)) ** 2
        self.assertAlmostEqual(value, total, delta=1e-12 * total)
