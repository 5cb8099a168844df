"""
Numerical checks of the a priori estimates of the primitive equations:
the w bound, the energy inequality of the linear system with its explicit
constants, the bilinear advection bound, and the Picard iteration used as
an independent integrator.
"""
import math
from dataclasses import dataclass, field, replace

from floatvar.apps import LOGGER
from floatvar.utils.dynamics import Forcing, advection, diagnose_w, integrate
from floatvar.utils.grid import (
    NormParams,
    StateField,
    grad_2m_sq,
    horizontal_derivative,
    inner,
    norm_2m_sq,
    norm_U,
    scalar_norm_2m_sq,
)


class VerifyException(Exception):
    pass


@dataclass(frozen=True)
class EstimateConstants:
    C1: float
    C2: float
    C3: float
    C4: float


def estimate_constants(a, nu, K, gamma, beta, alpha):
    """Closed-form constants of the linear energy inequality."""
    coriolis = 1.0 + 2.0 * alpha ** 2 / nu
    C1 = 2.0 * max(
        coriolis,
        (1.0 + abs(gamma - beta / K)) / coriolis,
        max(1.0, a ** 2 * abs(K * gamma - beta)) + 2.0 * gamma * a ** 2 * (K * gamma + beta) / nu,
    )
    return EstimateConstants(
        C1=C1,
        C2=2.0 + 4.0 / (K * nu),
        C3=4.0 + 4.0 * a ** 2 / nu,
        C4=2.0 + 8.0 / nu,
    )


def minimal_K(a, nu, gamma, beta):
    return 2.0 * max(4.0 * a ** 2 / nu ** 2, 2.0 * gamma * beta)


@dataclass
class WBoundReport:
    lhs: float
    rhs: float
    passed: bool


def check_w_bound(X, slack=0.05):
    """||w||^2 <= a^2 (||du/dx||^2 + ||dv/dy||^2), up to quadrature slack."""
    grid = X.grid
    w = diagnose_w(X.u, X.v, grid)
    ux = horizontal_derivative(X.u, grid, "x")
    vy = horizontal_derivative(X.v, grid, "y")
    lhs = inner(w, w, grid)
    rhs = grid.a ** 2 * (inner(ux, ux, grid) + inner(vy, vy, grid))
    return WBoundReport(lhs, rhs, lhs <= rhs * (1.0 + slack))


@dataclass
class EnergyReport:
    constants: EstimateConstants
    C5: float
    times: list = field(default_factory=list)
    lhs: list = field(default_factory=list)
    log_rhs: list = field(default_factory=list)
    margin: list = field(default_factory=list)
    passed: bool = True

    def rows(self):
        return [
            (n, t, lhs, _exp_or_inf(lr), m)
            for n, (t, lhs, lr, m) in enumerate(zip(self.times, self.lhs, self.log_rhs, self.margin))
        ]


def _exp_or_inf(x):
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 700.0 else math.inf


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def _split_norms(X, params):
    """||U||^2, ||theta||^2, ||grad U||^2, ||grad theta||^2 in the (2, m) norm."""
    grid = X.grid
    velocity = StateField(grid, X.u, X.v, grid.zeros())
    temperature = StateField(grid, grid.zeros(), grid.zeros(), X.theta)
    unit = NormParams(params.m, 1.0)
    return (
        norm_2m_sq(velocity, unit),
        norm_2m_sq(temperature, unit),
        grad_2m_sq(velocity, unit),
        grad_2m_sq(temperature, unit),
    )


def check_energy_inequality(X0, F, cfg, T, params):
    """
    Integrates the linear system forced by the constant field F and compares
    ||X||^2 + ||grad X||^2 + (1/nu) int ||dX/dt||^2 with
    exp(C1 t) (C2 ||X0||^2 + C3 ||grad X0||^2 + C4 int_0^T ||F||^2) at every
    step. The right side is kept in log form.
    """
    if not cfg.linear:
        raise VerifyException("the energy inequality applies to the linear model")
    phys = cfg.phys
    grid = X0.grid
    K_min = minimal_K(grid.a, phys.nu, phys.gamma, phys.beta)
    if params.K < K_min:
        raise VerifyException(f"K={params.K} is below the required 2*max(4a^2/nu^2, 2*gamma*beta)={K_min}")
    constants = estimate_constants(grid.a, phys.nu, params.K, phys.gamma, phys.beta, phys.alpha)

    nsteps = int(round(T / cfg.dt))
    forcing = Forcing("linear_rhs", F1=F.u, F2=F.v, F3=F.theta)
    traj = integrate(X0, replace(cfg, forcing=forcing), nsteps, keep_stages=True)

    forcing_total = T * norm_2m_sq(F, params)
    bracket = (
        constants.C2 * norm_2m_sq(X0, params)
        + constants.C3 * grad_2m_sq(X0, params)
        + constants.C4 * forcing_total
    )
    U2, T2, gU2, gT2 = _split_norms(X0, params)
    FU2, FT2, _, _ = _split_norms(F, params)
    C5 = (
        2.0 * U2 + (2.0 * params.K + 4.0 / phys.nu) * T2
        + (4.0 + 4.0 * grid.a ** 2 / phys.nu) * gU2 + 4.0 * params.K * gT2
        + constants.C4 * T * (FU2 + FT2)
    )

    report = EnergyReport(constants, C5)
    dissipation = 0.0
    for n, X in enumerate(traj.states):
        if n:
            K1, K2 = traj.stages[n - 1]
            dissipation += 0.5 * cfg.dt * (norm_2m_sq(K1, params) + norm_2m_sq(K2, params))
        t = n * cfg.dt
        lhs = norm_2m_sq(X, params) + grad_2m_sq(X, params) + dissipation / phys.nu
        log_rhs = constants.C1 * t + _log(bracket)
        ok = lhs <= 0.0 if log_rhs == -math.inf else _log(lhs) <= log_rhs
        report.times.append(t)
        report.lhs.append(lhs)
        report.log_rhs.append(log_rhs)
        report.margin.append(_exp_or_inf(log_rhs) - lhs)
        report.passed = report.passed and ok
    LOGGER.info(
        f"ENERGY CHECK | passed={report.passed} | C1={constants.C1:.6e} | C2={constants.C2:.6e} "
        f"| C3={constants.C3:.6e} | C4={constants.C4:.6e} | C5={C5:.6e}"
    )
    return report


def bilinear_advection(X1, X2):
    """F(X1, X2): advection of each component of X2 by the velocity of X1."""
    grid = X1.grid
    w1 = diagnose_w(X1.u, X1.v, grid)
    return StateField(
        grid,
        *(advection(phi, X1.u, X1.v, w1, grid) * grid.interior for phi in X2.components)
    )


@dataclass
class NonlinearReport:
    rho: float
    rho_components: tuple
    rho_self: float
    degenerate: bool


def check_nonlinear_bound(X1, X2, params=None):
    """
    Ratios ||F_i||^2 / ((||X1|| + a^2 ||grad X1||) ||grad X1|| ||grad X2||^2)
    per component, and the self-interaction ratio
    ||F_i(X1, X1)||^2 / (||X1||^2 + ||grad X1||^2)^2.
    """
    params = params or NormParams()
    grid = X1.grid
    m = params.m
    n1 = math.sqrt(norm_2m_sq(X1, params))
    g1 = math.sqrt(grad_2m_sq(X1, params))
    g2 = math.sqrt(grad_2m_sq(X2, params))
    denominator = (n1 + grid.a ** 2 * g1) * g1 * g2 ** 2
    self_denominator = (n1 ** 2 + g1 ** 2) ** 2
    degenerate = denominator == 0.0 or self_denominator == 0.0

    cross = bilinear_advection(X1, X2)
    rho_components = tuple(
        scalar_norm_2m_sq(f, grid, m) / denominator if denominator > 0 else 0.0
        for f in cross.components
    )
    own = bilinear_advection(X1, X1)
    rho_self = max(
        (scalar_norm_2m_sq(f, grid, m) / self_denominator if self_denominator > 0 else 0.0)
        for f in own.components
    )
    return NonlinearReport(max(rho_components), rho_components, rho_self, degenerate)


@dataclass
class PicardRun:
    t_star: float
    residuals: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    states: list = field(default_factory=list)

    @property
    def monotone(self):
        return all(b < a for a, b in zip(self.residuals, self.residuals[1:]))


def n_functional(states, dt, params):
    """sup_t ||X(t)||_U^2 + int ||dX/dt||^2 over a sampled trajectory."""
    sup = max(norm_U(X, params) ** 2 for X in states)
    total = 0.0
    for a, b in zip(states, states[1:]):
        rate = (b - a) * (1.0 / dt)
        total += dt * norm_2m_sq(rate, params)
    return sup + total


def picard_integrate(X0, cfg, T, max_n=30, tol=1e-10, params=None, patience=3):
    """
    Fixed-point iteration X^{n+1} = linear solve forced by -F(X^n, X^n),
    X^0 constant in time. Stops when the N-residual falls below tol times
    N(X^{n+1}).
    """
    params = params or NormParams()
    nsteps = int(round(T / cfg.dt))
    linear_cfg = replace(cfg, linear=True, forcing=Forcing())
    run = PicardRun(t_star=nsteps * cfg.dt)
    previous = [X0] * (nsteps + 1)
    rising = 0
    for n in range(1, max_n + 1):
        forcing = [(-bilinear_advection(X, X)).components for X in previous]
        traj = integrate(
            X0, linear_cfg, nsteps,
            forcing_schedule=lambda k: (forcing[k], forcing[k + 1]),
        )
        delta = [b - a for a, b in zip(previous, traj.states)]
        residual = n_functional(delta, cfg.dt, params)
        scale = n_functional(traj.states, cfg.dt, params)
        if run.residuals:
            last = run.residuals[-1]
            run.ratios.append(residual / last if last > 0 else 0.0)
            rising = rising + 1 if residual > last else 0
        run.residuals.append(residual)
        run.iterations = n
        run.states = traj.states
        previous = traj.states
        LOGGER.debug(f"PICARD ITERATION | {n} | residual={residual:.6e}")
        if residual <= tol * scale:
            run.converged = True
            break
        if rising >= patience:
            raise VerifyException(
                f"t* too large: Picard residual increased {patience} times in a row (t*={run.t_star})"
            )
    LOGGER.info(
        f"PICARD | converged={run.converged} | iterations={run.iterations} | t*={run.t_star} "
        f"| last residual={run.residuals[-1]:.6e}"
    )
    return run


def relative_l2_difference(states_a, states_b):
    num = sum((a - b).dot(a - b) for a, b in zip(states_a, states_b))
    den = sum(b.dot(b) for b in states_b)
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)
