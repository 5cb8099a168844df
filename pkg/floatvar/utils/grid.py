"""
Discrete domain T^2 x (0, a) on a collocated grid.

Fields are numpy arrays of shape (nx, ny, nz) indexed [i, j, k] with x along
axis 0, y along axis 1 and z along axis 2; level k=0 is z=0 and k=nz-1 is
z=a. Prognostic fields vanish on both z boundaries.

Every linear operator comes with a Euclidean transpose (``*_transpose``).
``weighted_adjoint`` turns such a transpose into the adjoint for the
quadrature inner product ``inner``.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi
AXES = {"x": 0, "y": 1}


class GridException(Exception):
    pass


@dataclass(frozen=True)
class Grid:
    GridException = GridException

    nx: int
    ny: int
    nz: int
    a: float = 1.0

    def __post_init__(self):
        if int(self.nx) < 4 or int(self.ny) < 4:
            raise GridException(f"nx and ny must be >= 4, got nx={self.nx} ny={self.ny}")
        if int(self.nz) < 3:
            raise GridException(f"nz must be >= 3, got nz={self.nz}")
        if not self.a > 0:
            raise GridException(f"depth a must be positive, got a={self.a}")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def dx(self):
        return TWO_PI / self.nx

    @property
    def dy(self):
        return TWO_PI / self.ny

    @property
    def dz(self):
        return self.a / (self.nz - 1)

    @cached_property
    def x(self):
        return np.arange(self.nx) * self.dx

    @cached_property
    def y(self):
        return np.arange(self.ny) * self.dy

    @cached_property
    def z(self):
        return np.arange(self.nz) * self.dz

    @cached_property
    def mesh(self):
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    @cached_property
    def level_weights(self):
        # trapezoid in z
        q = np.full(self.nz, self.dz)
        q[0] = q[-1] = 0.5 * self.dz
        return q

    @cached_property
    def weights(self):
        w = np.empty(self.shape)
        w[...] = self.dx * self.dy * self.level_weights
        return w

    @cached_property
    def interior(self):
        """Broadcastable (1, 1, nz) mask, 1 on interior levels and 0 on z=0, z=a."""
        mask = np.ones((1, 1, self.nz))
        mask[..., 0] = 0.0
        mask[..., -1] = 0.0
        return mask

    def zeros(self):
        return np.zeros(self.shape)

    def check_field(self, f, prognostic=False, name="field"):
        f = np.asarray(f)
        if f.shape != self.shape:
            raise GridException(f"{name} has shape {f.shape}, expected {self.shape}")
        if not np.all(np.isfinite(f)):
            raise GridException(f"{name} has non-finite values")
        if prognostic and (np.any(f[..., 0] != 0.0) or np.any(f[..., -1] != 0.0)):
            raise GridException(f"{name} is not zero on the z boundaries")
        return f

    def check_stencil(self, order):
        if 2 * order > min(self.nx, self.ny):
            raise GridException(
                f"grid {self.nx}x{self.ny} too small for derivative order {order}"
            )


@dataclass(frozen=True)
class NormParams:
    m: int = 2
    K: float = 1.0

    def __post_init__(self):
        if int(self.m) < 2:
            raise GridException(f"norm order m must be >= 2, got m={self.m}")
        if not self.K > 0:
            raise GridException(f"temperature weight K must be positive, got K={self.K}")


@dataclass(eq=False)
class StateField:
    """Prognostic state X = (u, v, theta)."""
    __array_ufunc__ = None

    grid: Grid
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    @classmethod
    def zeros(cls, grid):
        return cls(grid, grid.zeros(), grid.zeros(), grid.zeros())

    @property
    def components(self):
        return (self.u, self.v, self.theta)

    def map(self, func):
        return StateField(self.grid, func(self.u), func(self.v), func(self.theta))

    def copy(self):
        return self.map(np.copy)

    def masked(self):
        mask = self.grid.interior
        return self.map(lambda f: f * mask)

    def with_theta(self, theta):
        return StateField(self.grid, self.u, self.v, theta)

    def __add__(self, other):
        return StateField(self.grid, self.u + other.u, self.v + other.v, self.theta + other.theta)

    def __sub__(self, other):
        return StateField(self.grid, self.u - other.u, self.v - other.v, self.theta - other.theta)

    def __mul__(self, scalar):
        return self.map(lambda f: scalar * f)

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(np.negative)

    def dot(self, other):
        """Quadrature inner product."""
        return sum(inner(f, g, self.grid) for f, g in zip(self.components, other.components))

    def norm(self):
        return float(np.sqrt(max(self.dot(self), 0.0)))

    def euclidean_dot(self, other):
        return float(sum(np.sum(f * g) for f, g in zip(self.components, other.components)))

    def is_finite(self):
        return all(np.all(np.isfinite(f)) for f in self.components)

    def is_zero(self):
        return not any(np.any(f) for f in self.components)

    def check(self):
        for name, f in zip(("u", "v", "theta"), self.components):
            self.grid.check_field(f, prognostic=True, name=name)
        return self


def inner(f, g, grid):
    return float(np.sum(grid.weights * f * g))


def weighted_adjoint(transpose, g, grid):
    """Adjoint w.r.t. ``inner`` from a Euclidean transpose: W^-1 L^T W g."""
    return transpose(g * grid.weights) / grid.weights


def horizontal_derivative(f, grid, axis, order=1):
    grid.check_stencil(order)
    ax = AXES[axis]
    h = grid.dx if ax == 0 else grid.dy
    out = f
    for _ in range(order):
        out = (np.roll(out, -1, axis=ax) - np.roll(out, 1, axis=ax)) / (2.0 * h)
    return out


def horizontal_derivative_transpose(g, grid, axis, order=1):
    out = horizontal_derivative(g, grid, axis, order)
    return -out if order % 2 else out


def vertical_derivative(f, grid, boundaries=True):
    """
    Centered differences at interior levels. With ``boundaries`` the end
    levels use one-sided second-order stencils, otherwise they are zero.
    """
    c = 0.5 / grid.dz
    out = np.zeros_like(f)
    out[..., 1:-1] = c * (f[..., 2:] - f[..., :-2])
    if boundaries:
        out[..., 0] = c * (4.0 * (f[..., 1] - f[..., 0]) - (f[..., 2] - f[..., 0]))
        out[..., -1] = c * (4.0 * (f[..., -1] - f[..., -2]) - (f[..., -1] - f[..., -3]))
    return out


def vertical_derivative_transpose(g, grid, boundaries=True):
    c = 0.5 / grid.dz
    out = np.zeros_like(g)
    out[..., :-2] -= c * g[..., 1:-1]
    out[..., 2:] += c * g[..., 1:-1]
    if boundaries:
        g0, gn = g[..., 0], g[..., -1]
        out[..., 0] -= 3.0 * c * g0
        out[..., 1] += 4.0 * c * g0
        out[..., 2] -= c * g0
        out[..., -3] += c * gn
        out[..., -2] -= 4.0 * c * gn
        out[..., -1] += 3.0 * c * gn
    return out


def cumulative_vertical_integral(f, grid):
    """Trapezoidal integral from z=0 to every level; level 0 is exactly zero."""
    out = np.zeros_like(f)
    out[..., 1:] = np.cumsum(0.5 * (f[..., 1:] + f[..., :-1]), axis=-1) * grid.dz
    return out


def cumulative_vertical_integral_transpose(g, grid):
    dz = grid.dz
    tail = np.flip(np.cumsum(np.flip(g, axis=-1), axis=-1), axis=-1)
    out = np.empty_like(g)
    out[..., 1:] = dz * (tail[..., 1:] - 0.5 * g[..., 1:])
    out[..., 0] = 0.5 * dz * tail[..., 1]
    return out


def laplacian(f, grid):
    """Compact 3-point Laplacian; periodic in x, y and zero on the z boundaries."""
    out = (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / grid.dx ** 2
    out += (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / grid.dy ** 2
    out[..., 0] = 0.0
    out[..., -1] = 0.0
    out[..., 1:-1] += (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / grid.dz ** 2
    return out


def laplacian_transpose(g, grid):
    g = g * grid.interior
    out = (np.roll(g, -1, axis=0) - 2.0 * g + np.roll(g, 1, axis=0)) / grid.dx ** 2
    out += (np.roll(g, -1, axis=1) - 2.0 * g + np.roll(g, 1, axis=1)) / grid.dy ** 2
    inv = 1.0 / grid.dz ** 2
    out[..., 1:-1] -= 2.0 * inv * g[..., 1:-1]
    out[..., :-2] += inv * g[..., 1:-1]
    out[..., 2:] += inv * g[..., 1:-1]
    return out


def multi_index_derivatives(f, grid, m):
    """Yields ((i, j), d_x^i d_y^j f) for every i + j <= m."""
    grid.check_stencil(m)
    along_x = f
    for i in range(m + 1):
        if i:
            along_x = horizontal_derivative(along_x, grid, "x")
        d = along_x
        yield (i, 0), d
        for j in range(1, m - i + 1):
            d = horizontal_derivative(d, grid, "y")
            yield (i, j), d


def scalar_norm_2m_sq(f, grid, m):
    return sum(inner(d, d, grid) for _, d in multi_index_derivatives(f, grid, m))


def _first_derivatives(f, grid):
    return (
        horizontal_derivative(f, grid, "x"),
        horizontal_derivative(f, grid, "y"),
        vertical_derivative(f, grid),
    )


def _component_weights(params):
    return (1.0, 1.0, params.K)


def norm_2m_sq(X, params):
    return sum(
        c * scalar_norm_2m_sq(f, X.grid, params.m)
        for c, f in zip(_component_weights(params), X.components)
    )


def grad_2m_sq(X, params):
    total = 0.0
    for c, f in zip(_component_weights(params), X.components):
        for d in _first_derivatives(f, X.grid):
            total += c * scalar_norm_2m_sq(d, X.grid, params.m)
    return total


def norm_2m(X, params):
    return float(np.sqrt(norm_2m_sq(X, params)))


def grad_2m(X, params):
    return float(np.sqrt(grad_2m_sq(X, params)))


def norm_U(X, params):
    return float(np.sqrt(norm_2m_sq(X, params) + grad_2m_sq(X, params)))


def _sobolev_normal(f, grid, m):
    # sum over |alpha| <= m of (D^alpha)^T W D^alpha f
    out = np.zeros_like(f)
    for (i, j), d in multi_index_derivatives(f, grid, m):
        g = d * grid.weights
        if j:
            g = horizontal_derivative_transpose(g, grid, "y", j)
        if i:
            g = horizontal_derivative_transpose(g, grid, "x", i)
        out += g
    return out


def norm_U_sq_gradient(X, params):
    """Gradient of 1/2 norm_U(X)^2 with respect to ``inner``."""
    grid = X.grid
    comps = []
    for c, f in zip(_component_weights(params), X.components):
        g = _sobolev_normal(f, grid, params.m)
        dfx, dfy, dfz = _first_derivatives(f, grid)
        g += horizontal_derivative_transpose(_sobolev_normal(dfx, grid, params.m), grid, "x")
        g += horizontal_derivative_transpose(_sobolev_normal(dfy, grid, params.m), grid, "y")
        g += vertical_derivative_transpose(_sobolev_normal(dfz, grid, params.m), grid)
        comps.append(c * g / grid.weights)
    return StateField(grid, *comps).masked()


def random_state(grid, rng, amplitude=1.0, modes=2):
    """
    Smooth random prognostic state: a few low Fourier modes in x, y times
    sine modes in z, coefficients drawn from ``rng``.
    """
    X, Y, Z = grid.mesh
    comps = []
    for _ in range(3):
        f = grid.zeros()
        for kx in range(modes + 1):
            for ky in range(modes + 1):
                phase = kx * X + ky * Y
                for kz in range(1, modes + 1):
                    c, s = rng.normal(size=2)
                    scale = 1.0 / (1.0 + kx ** 2 + ky ** 2 + kz ** 2)
                    f += scale * (c * np.cos(phase) + s * np.sin(phase)) * np.sin(kz * np.pi * Z / grid.a)
        comps.append(amplitude * f * grid.interior)
    return StateField(grid, *comps)
