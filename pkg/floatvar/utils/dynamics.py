"""
Hydrostatic primitive equations on the periodic channel T^2 x (0, a),
z=0 being the surface:

    du/dt = nu lap u - adv(u) + alpha v - dp/dx + F1
    dv/dt = nu lap v - adv(v) - alpha u - dp/dy + F2
    dT/dt = nu lap T - adv(T) - gamma w + F3

with adv(f) = u df/dx + v df/dy + w df/dz, w = -int_0^z (du/dx + dv/dy) and
p = p_s + beta int_0^z T. The surface pressure p_s is whatever keeps the
depth-integrated divergence zero; it is found by projecting the momentum
tendencies (rigid lid). Time stepping is Heun (RK2).
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from django.conf import settings

from floatvar.apps import LOGGER
from floatvar.utils.grid import (
    StateField,
    cumulative_vertical_integral,
    horizontal_derivative,
    inner,
    laplacian,
    vertical_derivative,
)
from floatvar.utils.snapshots import write_csv, write_state

FORCING_MODES = ("none", "linear_rhs", "wind")


class DynamicsException(Exception):
    pass

class CFLException(DynamicsException):
    pass

class PoissonException(DynamicsException):
    pass

class BlowUpException(DynamicsException):
    pass


@dataclass(frozen=True)
class PhysParams:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.5
    nu: float = 0.02

    def __post_init__(self):
        if not self.nu > 0:
            raise DynamicsException(f"nu must be positive, got {self.nu}")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise DynamicsException(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class Forcing:
    mode: str = "none"
    tau0: float = 0.0
    depth_profile: tuple = ()
    F1: np.ndarray = None
    F2: np.ndarray = None
    F3: np.ndarray = None

    def __post_init__(self):
        if self.mode not in FORCING_MODES:
            raise DynamicsException(f"unknown forcing mode '{self.mode}'")
        if self.mode == "linear_rhs" and any(F is None for F in (self.F1, self.F2, self.F3)):
            raise DynamicsException("linear_rhs forcing needs F1, F2 and F3")
        if any(g < 0 for g in self.depth_profile):
            raise DynamicsException("wind depth profile weights must be nonnegative")
        if self.depth_profile and not np.isclose(sum(self.depth_profile), 1.0, rtol=1e-9, atol=0.0):
            raise DynamicsException(f"wind depth profile weights must sum to 1, got {sum(self.depth_profile):g}")

    def fields(self, grid):
        if self.mode == "none":
            return None
        if self.mode == "linear_rhs":
            mask = grid.interior
            return (self.F1 * mask, self.F2 * mask, self.F3 * mask)
        return wind_fields(grid, self.tau0, tuple(self.depth_profile))


@lru_cache(maxsize=16)
def default_wind_profile(nz):
    g = np.zeros(nz)
    if nz == 3:
        g[1] = 1.0
    else:
        g[1] = g[2] = 0.5
    return g


@lru_cache(maxsize=16)
def wind_fields(grid, tau0, depth_profile=()):
    """Zonal wind stress stand-in tau0 cos(y) g(z) acting on the top interior levels."""
    if depth_profile:
        if len(depth_profile) != grid.nz:
            raise DynamicsException(
                f"depth_profile has {len(depth_profile)} weights, grid has nz={grid.nz}"
            )
        g = np.asarray(depth_profile, dtype=float)
    else:
        g = default_wind_profile(grid.nz)
    fu = tau0 * np.cos(grid.y)[None, :, None] * g[None, None, :] * np.ones(grid.shape)
    fu = fu * grid.interior
    return (fu, grid.zeros(), grid.zeros())


@dataclass(frozen=True)
class ModelConfig:
    phys: PhysParams = field(default_factory=PhysParams)
    dt: float = 0.05
    linear: bool = False
    forcing: Forcing = field(default_factory=Forcing)

    def __post_init__(self):
        if not self.dt > 0:
            raise DynamicsException(f"dt must be positive, got {self.dt}")


class RigidLidProjector:
    """
    Removes the depth-integrated divergence from momentum tendencies by a
    surface pressure gradient, solving the periodic Poisson problem with the
    same centered first derivatives the model uses (so the discrete
    constraint holds to rounding). Null modes of the discrete Laplacian are
    dropped, which fixes p_s to zero mean.

    The projection is symmetric in both the Euclidean and the quadrature
    inner product and idempotent, so it is its own transpose.
    """
    PoissonException = PoissonException

    def __init__(self, grid, tol=None):
        self.grid = grid
        self.tol = settings.FLOATVAR_POISSON_TOL if tol is None else tol
        kx = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
        ky = np.fft.fftfreq(grid.ny, d=1.0 / grid.ny)
        sx = np.sin(kx * grid.dx) / grid.dx
        sy = np.sin(ky * grid.dy) / grid.dy
        self.eigenvalues = -(sx[:, None] ** 2 + sy[None, :] ** 2)
        self.eig_max = float(np.max(np.abs(self.eigenvalues)))
        nonnull = np.abs(self.eigenvalues) > 1e-12 * self.eig_max
        self.inverse = np.zeros_like(self.eigenvalues)
        self.inverse[nonnull] = 1.0 / self.eigenvalues[nonnull]
        self.solvable = nonnull.astype(float)
        self.column_depth = (grid.nz - 2) * grid.dz

    def _laplacian_2d(self, p):
        dpx = horizontal_derivative(p, self.grid, "x")
        dpy = horizontal_derivative(p, self.grid, "y")
        return horizontal_derivative(dpx, self.grid, "x") + horizontal_derivative(dpy, self.grid, "y")

    def solve(self, rhs, scale=None):
        """
        Solves lap(p) = rhs up to the null modes. The residual is measured
        against the solvable part of rhs, relative to ``scale`` (the size of
        the fields rhs was differenced from) or to max|rhs|.
        """
        peak = float(np.max(np.abs(rhs)))
        if peak == 0.0:
            return np.zeros_like(rhs)
        rhs_hat = np.fft.fft2(rhs)
        p = np.real(np.fft.ifft2(rhs_hat * self.inverse))
        solvable = np.real(np.fft.ifft2(rhs_hat * self.solvable))
        residual = float(np.max(np.abs(self._laplacian_2d(p) - solvable)))
        reference = max(peak, scale or 0.0) + self.eig_max * float(np.max(np.abs(p)))
        relative = residual / reference
        if relative > self.tol:
            raise PoissonException(
                f"surface pressure solve residual {relative:.3e} exceeds tolerance {self.tol:.1e}"
            )
        return p

    def project(self, Gu, Gv):
        grid = self.grid
        mask = grid.interior
        Gu = Gu * mask
        Gv = Gv * mask
        Su = grid.dz * Gu[..., 1:-1].sum(axis=-1)
        Sv = grid.dz * Gv[..., 1:-1].sum(axis=-1)
        rhs = (horizontal_derivative(Su, grid, "x") + horizontal_derivative(Sv, grid, "y")) / self.column_depth
        scale = np.sqrt(self.eig_max) * max(float(np.max(np.abs(Su))), float(np.max(np.abs(Sv)))) / self.column_depth
        p_s = self.solve(rhs, scale)
        Gu = Gu - mask * horizontal_derivative(p_s, grid, "x")[:, :, None]
        Gv = Gv - mask * horizontal_derivative(p_s, grid, "y")[:, :, None]
        return Gu, Gv, p_s


@lru_cache(maxsize=16)
def get_projector(grid):
    return RigidLidProjector(grid)


def project_rigid_lid(Gu, Gv, grid):
    return get_projector(grid).project(Gu, Gv)


def project_state(X):
    """Applies the rigid-lid projection to the velocity of a state."""
    u, v, _ = project_rigid_lid(X.u, X.v, X.grid)
    return StateField(X.grid, u, v, X.theta * X.grid.interior)


def depth_integrated_divergence(u, v, grid):
    div = horizontal_derivative(u, grid, "x") + horizontal_derivative(v, grid, "y")
    return np.sum(div * grid.level_weights, axis=-1)


def diagnose_w(u, v, grid):
    div = horizontal_derivative(u, grid, "x") + horizontal_derivative(v, grid, "y")
    return -cumulative_vertical_integral(div, grid)


def diagnose_pressure(theta, p_s, beta, grid):
    return np.asarray(p_s)[:, :, None] + beta * cumulative_vertical_integral(theta, grid)


def advection(phi, u, v, w, grid):
    return (
        u * horizontal_derivative(phi, grid, "x")
        + v * horizontal_derivative(phi, grid, "y")
        + w * vertical_derivative(phi, grid, boundaries=False)
    )


def tendency(X, cfg, forcing=None, with_pressure=False):
    """
    Right-hand side of the model at state X. ``forcing`` overrides the
    configured forcing with an explicit (Fu, Fv, Ftheta) triple.
    """
    grid = X.grid
    phys = cfg.phys
    u, v, theta = X.components
    w = diagnose_w(u, v, grid)
    hydrostatic = phys.beta * cumulative_vertical_integral(theta, grid)

    Gu = phys.nu * laplacian(u, grid) + phys.alpha * v - horizontal_derivative(hydrostatic, grid, "x")
    Gv = phys.nu * laplacian(v, grid) - phys.alpha * u - horizontal_derivative(hydrostatic, grid, "y")
    Gt = phys.nu * laplacian(theta, grid) - phys.gamma * w

    if not cfg.linear:
        Gu -= advection(u, u, v, w, grid)
        Gv -= advection(v, u, v, w, grid)
        Gt -= advection(theta, u, v, w, grid)

    F = cfg.forcing.fields(grid) if forcing is None else forcing
    if F is not None:
        Gu = Gu + F[0]
        Gv = Gv + F[1]
        Gt = Gt + F[2]

    Gu, Gv, p_s = project_rigid_lid(Gu, Gv, grid)
    G = StateField(grid, Gu, Gv, Gt * grid.interior)
    if with_pressure:
        return G, diagnose_pressure(theta, p_s, phys.beta, grid)
    return G


def cfl_check(X, cfg):
    grid = X.grid
    h = min(grid.dx, grid.dy, grid.dz)
    limits = [h ** 2 / (6.0 * cfg.phys.nu)]
    w = diagnose_w(X.u, X.v, grid)
    for field_, spacing in ((X.u, grid.dx), (X.v, grid.dy), (w, grid.dz)):
        peak = float(np.max(np.abs(field_)))
        if peak > 0:
            limits.append(spacing / peak)
    return 0.5 * min(limits)


def heun_step(X, cfg, forcing=None, check=True):
    """
    One RK2 step; returns (X+, K1, K2). ``forcing`` is an optional pair of
    explicit forcing triples at the start and the end of the step.
    """
    if check:
        limit = cfl_check(X, cfg)
        if cfg.dt > limit:
            raise CFLException(f"dt={cfg.dt} exceeds the stable limit {limit:.6g}")
    f_start, f_end = forcing if forcing is not None else (None, None)
    K1 = tendency(X, cfg, forcing=f_start)
    X_stage = X + cfg.dt * K1
    K2 = tendency(X_stage, cfg, forcing=f_end)
    X_next = X + (0.5 * cfg.dt) * (K1 + K2)
    return X_next, K1, K2


def step(X, cfg):
    return heun_step(X, cfg)[0]


def diagnostics_row(step_index, time, X):
    grid = X.grid
    return {
        "step": step_index,
        "time": time,
        "ke": 0.5 * (inner(X.u, X.u, grid) + inner(X.v, X.v, grid)),
        "theta2": inner(X.theta, X.theta, grid),
        "maxdiv": float(np.max(np.abs(depth_integrated_divergence(X.u, X.v, grid)))),
    }


@dataclass
class Trajectory:
    dt: float
    states: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    @property
    def nsteps(self):
        return len(self.states) - 1

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]

    def time(self, index):
        return index * self.dt


class Recorder:
    """Collects diagnostics rows and writes a snapshot set every ``interval`` steps."""

    def __init__(self, out_dir=None, prefix="state", interval=0, step_offset=0):
        self.out_dir = out_dir
        self.prefix = prefix
        self.interval = interval
        self.step_offset = step_offset
        self.rows = []

    def __call__(self, step_index, time, X):
        index = step_index + self.step_offset
        self.rows.append(diagnostics_row(index, time, X))
        if self.out_dir is not None and self.interval and index % self.interval == 0:
            write_state(self.out_dir / f"{self.prefix}_{index:06d}", X)

    def write_diagnostics(self, path):
        columns = ("step", "time", "ke", "theta2", "maxdiv")
        write_csv(path, columns, ([row[c] for c in columns] for row in self.rows))


def integrate(X0, cfg, nsteps, recorder=None, keep_stages=False, forcing_schedule=None, time_offset=0.0):
    """
    Applies ``heun_step`` nsteps times and returns the Trajectory of all
    states. ``forcing_schedule(n)`` may return the explicit forcing pair for
    step n. Non-finite states abort with BlowUpException.
    """
    traj = Trajectory(dt=cfg.dt, states=[X0])
    if recorder is not None:
        recorder(0, time_offset, X0)
    X = X0
    for n in range(nsteps):
        forcing = forcing_schedule(n) if forcing_schedule is not None else None
        X, K1, K2 = heun_step(X, cfg, forcing=forcing)
        if not X.is_finite():
            raise BlowUpException(f"non-finite state after step {n + 1} (t={time_offset + (n + 1) * cfg.dt:.6g})")
        traj.states.append(X)
        if keep_stages:
            traj.stages.append((K1, K2))
        if recorder is not None:
            recorder(n + 1, time_offset + (n + 1) * cfg.dt, X)
    LOGGER.debug(f"INTEGRATE | nsteps={nsteps} | linear={cfg.linear} | forcing={cfg.forcing.mode}")
    return traj
