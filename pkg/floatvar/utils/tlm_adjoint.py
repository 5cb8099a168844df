"""
Tangent-linear model and adjoint of one model step composed with float
advection, their whole-window compositions, and the gradient of the cost.

The adjoint is the exact transpose of the discrete tangent model
(differentiate, then transpose). Internally everything is transposed in the
Euclidean inner product; the public entry points convert at the ends so
that field duals are adjoints for the quadrature inner product of
``grid.inner`` (lambda_W = W^-1 lambda_E) and float duals stay Euclidean.
Gradients are therefore gradients with respect to the weighted norm that
also defines Jb.
"""
from dataclasses import dataclass

import numpy as np

from floatvar.apps import LOGGER
from floatvar.utils.dynamics import (
    BlowUpException,
    advection,
    diagnose_w,
    heun_step,
    project_rigid_lid,
)
from floatvar.utils.floats import (
    advect_positions,
    interp_uv,
    interp_uv_jacobian,
    interp_uv_tangent,
    interp_uv_transpose,
)
from floatvar.utils.grid import (
    StateField,
    cumulative_vertical_integral,
    cumulative_vertical_integral_transpose,
    horizontal_derivative,
    horizontal_derivative_transpose,
    laplacian,
    laplacian_transpose,
    random_state,
    vertical_derivative,
    vertical_derivative_transpose,
)


class CheckpointException(Exception):
    pass


def fingerprint(cfg, grid, nsteps):
    forcing = cfg.forcing
    return (
        grid.shape, grid.a, cfg.dt, cfg.linear, cfg.phys,
        (forcing.mode, forcing.tau0, tuple(forcing.depth_profile)), nsteps,
    )


@dataclass(eq=False)
class Checkpoints:
    """Every state, predictor state and float position of a forward run."""
    CheckpointException = CheckpointException

    cfg: object
    states: list
    stages: list
    positions: list
    floats: object = None
    fingerprint: tuple = None

    @property
    def grid(self):
        return self.states[0].grid

    @property
    def nsteps(self):
        return len(self.states) - 1

    @property
    def has_floats(self):
        return self.floats is not None and len(self.floats) > 0

    def check(self, cfg, n=None):
        if fingerprint(cfg, self.grid, self.nsteps) != self.fingerprint:
            raise CheckpointException(
                f"checkpoints {self.fingerprint} do not match model {fingerprint(cfg, self.grid, self.nsteps)}"
            )
        if n is not None and not 0 <= n < self.nsteps:
            raise CheckpointException(f"step {n} outside checkpointed window of {self.nsteps} steps")

    def verify(self):
        """Recomputes the forward run and requires bit-exact agreement."""
        again = forward_with_checkpoints(self.states[0], self.cfg, self.nsteps, self.floats)
        for n, (a, b) in enumerate(zip(self.states, again.states)):
            if not all(np.array_equal(f, g) for f, g in zip(a.components, b.components)):
                raise CheckpointException(f"checkpoint {n} differs from recomputation")
        for n, (a, b) in enumerate(zip(self.positions, again.positions)):
            if not np.array_equal(a, b):
                raise CheckpointException(f"float positions at step {n} differ from recomputation")
        return True


def forward_with_checkpoints(X0, cfg, nsteps, floats=None):
    states = [X0]
    stages = []
    positions = [floats.positions.copy()] if floats is not None else []
    X = X0
    for n in range(nsteps):
        X_next, K1, _ = heun_step(X, cfg)
        if not X_next.is_finite():
            raise BlowUpException(f"non-finite state after step {n + 1} of the forward run")
        stages.append(X + cfg.dt * K1)
        if floats is not None:
            pos, _, _ = advect_positions(positions[-1], floats.z0, X, X_next, cfg.dt)
            positions.append(pos)
        states.append(X_next)
        X = X_next
    return Checkpoints(cfg, states, stages, positions, floats, fingerprint(cfg, X0.grid, nsteps))


def tendency_tl(X, dX, cfg):
    """Tangent of dynamics.tendency at X applied to dX (forcing drops out)."""
    grid = X.grid
    phys = cfg.phys
    du, dv, dtheta = dX.masked().components
    dw = diagnose_w(du, dv, grid)
    hydrostatic = phys.beta * cumulative_vertical_integral(dtheta, grid)

    Gu = phys.nu * laplacian(du, grid) + phys.alpha * dv - horizontal_derivative(hydrostatic, grid, "x")
    Gv = phys.nu * laplacian(dv, grid) - phys.alpha * du - horizontal_derivative(hydrostatic, grid, "y")
    Gt = phys.nu * laplacian(dtheta, grid) - phys.gamma * dw

    if not cfg.linear:
        u, v, _ = X.components
        w = diagnose_w(u, v, grid)
        Gu -= advection(du, u, v, w, grid) + advection(X.u, du, dv, dw, grid)
        Gv -= advection(dv, u, v, w, grid) + advection(X.v, du, dv, dw, grid)
        Gt -= advection(dtheta, u, v, w, grid) + advection(X.theta, du, dv, dw, grid)

    Gu, Gv, _ = project_rigid_lid(Gu, Gv, grid)
    return StateField(grid, Gu, Gv, Gt * grid.interior)


def tendency_ad(X, lam, cfg):
    """Euclidean transpose of tendency_tl at X applied to lam."""
    grid = X.grid
    phys = cfg.phys
    lu, lv, _ = project_rigid_lid(lam.u, lam.v, grid)
    lt = lam.theta * grid.interior

    au = phys.nu * laplacian_transpose(lu, grid) - phys.alpha * lv
    av = phys.nu * laplacian_transpose(lv, grid) + phys.alpha * lu
    at = phys.nu * laplacian_transpose(lt, grid)
    at += phys.beta * cumulative_vertical_integral_transpose(
        horizontal_derivative(lu, grid, "x") + horizontal_derivative(lv, grid, "y"), grid
    )
    lw = -phys.gamma * lt

    if not cfg.linear:
        u, v, _ = X.components
        w = diagnose_w(u, v, grid)
        adjoints = [au, av, at]
        for k, (phi, l_eq) in enumerate(zip(X.components, (lu, lv, lt))):
            # G -= u dphi/dx + v dphi/dy + w dphi/dz, linearized in both factors
            la = -l_eq
            au += la * horizontal_derivative(phi, grid, "x")
            av += la * horizontal_derivative(phi, grid, "y")
            lw += la * vertical_derivative(phi, grid, boundaries=False)
            adjoints[k] += (
                horizontal_derivative_transpose(u * la, grid, "x")
                + horizontal_derivative_transpose(v * la, grid, "y")
                + vertical_derivative_transpose(w * la, grid, boundaries=False)
            )

    c = cumulative_vertical_integral_transpose(lw, grid)
    au += horizontal_derivative(c, grid, "x")
    av += horizontal_derivative(c, grid, "y")
    return StateField(grid, au, av, at).masked()


def _float_tl(X, X_end, pos, dX, dX_end, dpos, dt, z0):
    grid = X.grid
    J1 = interp_uv_jacobian(X.u, X.v, pos, z0, grid)
    guess = pos + dt * interp_uv(X.u, X.v, pos, z0, grid)
    J2 = interp_uv_jacobian(X_end.u, X_end.v, guess, z0, grid)
    dk1 = interp_uv_tangent(dX.u, dX.v, pos, z0, grid, J1, dpos)
    dk2 = interp_uv_tangent(dX_end.u, dX_end.v, guess, z0, grid, J2, dpos + dt * dk1)
    return dpos + 0.5 * dt * (dk1 + dk2)


def _float_ad(X, X_end, pos, lpos_next, dt, z0, ids):
    grid = X.grid
    J1 = interp_uv_jacobian(X.u, X.v, pos, z0, grid)
    guess = pos + dt * interp_uv(X.u, X.v, pos, z0, grid)
    J2 = interp_uv_jacobian(X_end.u, X_end.v, guess, z0, grid)

    lk = 0.5 * dt * lpos_next
    end_u, end_v = interp_uv_transpose(lk, guess, z0, grid, ids)
    lguess = np.einsum("mcd,mc->md", J2, lk)
    lpos = lpos_next + lguess
    lk1 = lk + dt * lguess
    start_u, start_v = interp_uv_transpose(lk1, pos, z0, grid, ids)
    lpos = lpos + np.einsum("mcd,mc->md", J1, lk1)
    zeros = grid.zeros()
    return lpos, StateField(grid, start_u, start_v, zeros), StateField(grid, end_u, end_v, zeros)


def _tlm_step(ck, n, dX, dpos):
    cfg = ck.cfg
    dt = cfg.dt
    X, X_stage, X_end = ck.states[n], ck.stages[n], ck.states[n + 1]
    dX = dX.masked()
    dK1 = tendency_tl(X, dX, cfg)
    dK2 = tendency_tl(X_stage, dX + dt * dK1, cfg)
    dX_end = dX + (0.5 * dt) * (dK1 + dK2)
    dpos_end = None
    if ck.has_floats:
        dpos_end = _float_tl(X, X_end, ck.positions[n], dX, dX_end, dpos, dt, ck.floats.z0)
    return dX_end, dpos_end


def _adj_step(ck, n, lX_end, lpos_end):
    cfg = ck.cfg
    dt = cfg.dt
    X, X_stage, X_end = ck.states[n], ck.stages[n], ck.states[n + 1]
    lX_end = lX_end.masked()
    lX = StateField.zeros(X.grid)
    lpos = None
    if ck.has_floats:
        lpos, from_start, from_end = _float_ad(
            X, X_end, ck.positions[n], lpos_end, dt, ck.floats.z0, ck.floats.ids
        )
        lX = lX + from_start
        lX_end = lX_end + from_end
    lK = (0.5 * dt) * lX_end
    lX = lX + lX_end
    l_stage = tendency_ad(X_stage, lK, cfg)
    lX = lX + l_stage
    lX = lX + tendency_ad(X, lK + dt * l_stage, cfg)
    return lX.masked(), lpos


@dataclass(eq=False)
class AdjointState:
    lam_X: StateField
    lam_pos: np.ndarray = None


def _zero_positions(ck):
    return np.zeros((len(ck.floats), 2)) if ck.has_floats else None


def tlm_step(ck, n, dX, dpos, cfg):
    """Tangent of step n (state and floats) along the checkpointed trajectory of model cfg."""
    ck.check(cfg, n)
    if ck.has_floats and dpos is None:
        dpos = _zero_positions(ck)
    return _tlm_step(ck, n, dX, dpos)


def adj_step(ck, n, lam, cfg):
    """Adjoint of tlm_step for the quadrature inner product on fields."""
    ck.check(cfg, n)
    W = ck.grid.weights
    lpos = lam.lam_pos if lam.lam_pos is not None else _zero_positions(ck)
    lX, lpos = _adj_step(ck, n, lam.lam_X.map(lambda f: f * W), lpos)
    return AdjointState(lX.map(lambda f: f / W), lpos)


def tlm_window(ck, dX0, dpos0=None, keep=()):
    """
    Propagates (dX0, dpos0) over the whole window. Returns the final
    (dX, dpos) and the float tangents at the time indices in ``keep``.
    """
    ck.check(ck.cfg)
    dX = dX0
    dpos = dpos0 if dpos0 is not None else _zero_positions(ck)
    kept = {}
    if 0 in keep and dpos is not None:
        kept[0] = dpos.copy()
    for n in range(ck.nsteps):
        dX, dpos = _tlm_step(ck, n, dX, dpos)
        if n + 1 in keep and dpos is not None:
            kept[n + 1] = dpos
    return dX, dpos, kept


def adj_window(ck, lam_end=None, position_seeds=None):
    """
    Adjoint sweep from the window end to t=0. ``position_seeds`` maps time
    indices to Euclidean float duals injected at that time.
    """
    ck.check(ck.cfg)
    grid = ck.grid
    W = grid.weights
    seeds = position_seeds or {}
    if lam_end is None:
        lX = StateField.zeros(grid)
        lpos = _zero_positions(ck)
    else:
        lX = lam_end.lam_X.map(lambda f: f * W)
        lpos = lam_end.lam_pos if lam_end.lam_pos is not None else _zero_positions(ck)
    for n in reversed(range(ck.nsteps)):
        if n + 1 in seeds:
            lpos = lpos + seeds[n + 1]
        lX, lpos = _adj_step(ck, n, lX, lpos)
    if 0 in seeds and lpos is not None:
        lpos = lpos + seeds[0]
    return AdjointState(lX.map(lambda f: f / W), lpos)


@dataclass
class CostBreakdown:
    Jo: float
    Jb: float
    J: float
    gnorm: float = None


def observation_cost(ck, obs):
    """Jo and the per-time Euclidean position seeds dJo/dxi(t)."""
    if not ck.has_floats or len(obs) == 0:
        return 0.0, {}
    Jo = 0.0
    seeds = {}
    for t, rows, r in obs.residuals(ck.positions, ck.floats):
        Jo += 0.5 * float(np.sum(r * r))
        s = np.zeros((len(ck.floats), 2))
        np.add.at(s, rows, r)
        seeds[t] = s
    return Jo, seeds


def observation_gradient(ck, obs):
    """(Jo, weighted gradient of Jo w.r.t. the checkpointed initial state)."""
    Jo, seeds = observation_cost(ck, obs)
    if not seeds:
        return Jo, StateField.zeros(ck.grid)
    return Jo, adj_window(ck, None, seeds).lam_X


def checkpoint_problem(X0, problem):
    obs = problem.obs
    obs.check_window(problem.nsteps)
    floats = obs.deployment if len(obs) else None
    return forward_with_checkpoints(problem.control_state(X0), problem.cfg, problem.nsteps, floats)


def grad_cost(X0, problem, ck=None):
    """
    Gradient of J(X0) = Jo(control_state(X0)) + omega Jb(X0) with respect to
    the quadrature inner product, and its CostBreakdown.
    """
    if ck is None:
        ck = checkpoint_problem(X0, problem)
    Jo, g_obs = observation_gradient(ck, problem.obs)
    Jb = problem.background_cost(X0)
    g = problem.control_adjoint(g_obs) + problem.omega * problem.background_gradient(X0)
    if not g.is_finite():
        raise BlowUpException("non-finite gradient")
    return g, CostBreakdown(Jo, Jb, Jo + problem.omega * Jb, g.norm())


def evaluate_cost(X0, problem):
    ck = checkpoint_problem(X0, problem)
    Jo, _ = observation_cost(ck, problem.obs)
    Jb = problem.background_cost(X0)
    return CostBreakdown(Jo, Jb, Jo + problem.omega * Jb)


def random_direction(grid, rng, freeze_theta=False):
    d = random_state(grid, rng)
    if freeze_theta:
        d = d.with_theta(grid.zeros())
    return d


def dot_product_test(ck, rng):
    """Relative transpose defect of the whole-window TLM/adjoint pair."""
    grid = ck.grid
    dX = random_state(grid, rng)
    lX = random_state(grid, rng)
    dpos = rng.normal(size=(len(ck.floats), 2)) if ck.has_floats else None
    lpos = rng.normal(size=(len(ck.floats), 2)) if ck.has_floats else None

    dX_end, dpos_end, _ = tlm_window(ck, dX, dpos)
    adj = adj_window(ck, AdjointState(lX, lpos))

    lhs = dX_end.dot(lX)
    rhs = dX.dot(adj.lam_X)
    scale_d = dX.dot(dX)
    scale_l = lX.dot(lX)
    if ck.has_floats:
        lhs += float(np.sum(dpos_end * lpos))
        rhs += float(np.sum(dpos * adj.lam_pos))
        scale_d += float(np.sum(dpos * dpos))
        scale_l += float(np.sum(lpos * lpos))
    return abs(lhs - rhs) / np.sqrt(scale_d * scale_l)


def gradcheck(X0, problem, rng, directions=10, eps=1e-5):
    """Rows (direction, analytic, finite difference, relative error)."""
    g, breakdown = grad_cost(X0, problem)
    LOGGER.info(f"GRADCHECK | J={breakdown.J:.6e} | gnorm={breakdown.gnorm:.6e}")
    rows = []
    for i in range(directions):
        d = random_direction(X0.grid, rng, problem.freeze_theta)
        analytic = g.dot(d)
        plus = evaluate_cost(X0 + eps * d, problem).J
        minus = evaluate_cost(X0 - eps * d, problem).J
        fd = (plus - minus) / (2.0 * eps)
        scale = max(abs(fd), abs(analytic))
        rel = abs(analytic - fd) / scale if scale > 0 else 0.0
        LOGGER.info(f"GRADCHECK DIRECTION | {i} | analytic={analytic:.10e} | fd={fd:.10e} | rel={rel:.3e}")
        rows.append((i, analytic, fd, rel))
    return rows
