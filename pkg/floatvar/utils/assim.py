"""
Incremental 4D-Var: cost J = Jo + omega Jb over the initial state, outer
relinearizations of the model and the float observation operator, and a
conjugate-gradient inner loop on the Gauss-Newton quadratic model.
"""
from dataclasses import dataclass, field

import numpy as np

from floatvar.apps import LOGGER
from floatvar.utils.dynamics import project_state
from floatvar.utils.grid import NormParams, StateField, norm_U, norm_U_sq_gradient
from floatvar.utils.snapshots import write_csv
from floatvar.utils.tlm_adjoint import (
    CostBreakdown,
    adj_window,
    checkpoint_problem,
    evaluate_cost,
    grad_cost,
    tlm_window,
)

MINLOG_HEADER = ("outer", "inner", "J", "Jo", "Jb", "gnorm", "stepnorm", "qmodel")
JB_NORMS = ("b", "u")


class AssimException(Exception):
    pass

class IndefiniteHessianException(AssimException):
    pass


def _levels(sigma, nz, name):
    values = np.asarray(sigma, dtype=float)
    if values.ndim == 0:
        values = np.full(nz, float(values))
    if values.shape != (nz,):
        raise AssimException(f"{name} needs one value per level ({nz}), got {values.shape[0]}")
    if np.any(values <= 0):
        raise AssimException(f"{name} must be positive")
    return values


@dataclass(eq=False)
class AssimProblem:
    """
    Background X_b with diagonal error variances (per variable, optionally
    per level), weight omega, observations and the assimilation window.
    """
    AssimException = AssimException

    xb: StateField
    cfg: object
    nsteps: int
    obs: object
    sigma_u: object = 1.0
    sigma_v: object = 1.0
    sigma_theta: object = 1.0
    omega: float = 1.0
    freeze_theta: bool = False
    jb_norm: str = "b"
    norm: NormParams = field(default_factory=NormParams)

    def __post_init__(self):
        nz = self.xb.grid.nz
        self.sigma_u = _levels(self.sigma_u, nz, "sigma_u")
        self.sigma_v = _levels(self.sigma_v, nz, "sigma_v")
        self.sigma_theta = _levels(self.sigma_theta, nz, "sigma_theta")
        if self.omega < 0:
            raise AssimException(f"omega must be nonnegative, got {self.omega}")
        if self.jb_norm not in JB_NORMS:
            raise AssimException(f"jb_norm must be one of {JB_NORMS}, got '{self.jb_norm}'")
        if self.nsteps < 0:
            raise AssimException(f"window length must be nonnegative, got {self.nsteps}")
        if len(self.obs) and self.obs.deployment is None:
            raise AssimException("observations without a float deployment")

    @property
    def grid(self):
        return self.xb.grid

    def control_state(self, X0):
        """Model initial state for control X0: balanced velocities, theta frozen if asked."""
        Xc = project_state(X0)
        if self.freeze_theta:
            Xc = Xc.with_theta(self.xb.theta)
        return Xc

    def control_tangent(self, dX0):
        dXc = project_state(dX0)
        if self.freeze_theta:
            dXc = dXc.with_theta(self.grid.zeros())
        return dXc

    # the balance projection is self-adjoint
    control_adjoint = control_tangent

    def _freeze(self, X):
        return X.with_theta(self.grid.zeros()) if self.freeze_theta else X

    def departure(self, X0):
        return self._freeze((X0 - self.xb).masked())

    def background_hessian(self, dX):
        dX = self._freeze(dX.masked())
        if self.jb_norm == "u":
            return self._freeze(norm_U_sq_gradient(dX, self.norm))
        variances = (self.sigma_u ** 2, self.sigma_v ** 2, self.sigma_theta ** 2)
        return StateField(self.grid, *(f / s for f, s in zip(dX.components, variances)))

    def background_gradient(self, X0):
        return self.background_hessian(self.departure(X0))

    def background_cost(self, X0):
        e = self.departure(X0)
        if self.jb_norm == "u":
            return 0.5 * norm_U(e, self.norm) ** 2
        return 0.5 * e.dot(self.background_hessian(e))


def cost(X0, problem):
    return evaluate_cost(X0, problem)


def hessian_vec(dX0, ck, problem):
    """Gauss-Newton Hessian of J at the checkpointed trajectory applied to dX0."""
    grid = problem.grid
    obs = problem.obs
    h_obs = StateField.zeros(grid)
    if len(obs) and ck.has_floats:
        times = obs.times()
        _, _, kept = tlm_window(ck, problem.control_tangent(dX0), keep=set(times))
        seeds = {}
        for t in times:
            rows, _ = obs.records_at(t, ck.floats)
            s = np.zeros((len(ck.floats), 2))
            np.add.at(s, rows, kept[t][rows])
            seeds[t] = s
        h_obs = adj_window(ck, None, seeds).lam_X
    return problem.control_adjoint(h_obs) + problem.omega * problem.background_hessian(dX0)


@dataclass
class InnerRecord:
    inner: int
    qmodel: float
    resnorm: float
    stepnorm: float
    step: StateField = None
    hessian_step: StateField = None


def inner_solve(g, hessian_vec, tol=1e-3, max_iter=10):
    """
    Conjugate gradient on H delta = -g in the quadrature inner product,
    from delta = 0. Returns (delta, per-iteration records).
    """
    x = StateField.zeros(g.grid)
    Hx = StateField.zeros(g.grid)
    r = -g
    p = r
    rr = r.dot(r)
    r0 = np.sqrt(rr)
    records = []
    if r0 == 0:
        return x, records
    for i in range(max_iter):
        Hp = hessian_vec(p)
        curvature = p.dot(Hp)
        if not curvature > 0:
            raise IndefiniteHessianException(
                f"non-positive curvature {curvature:.3e} at inner iteration {i + 1}"
            )
        alpha = rr / curvature
        x = x + alpha * p
        Hx = Hx + alpha * Hp
        r = r - alpha * Hp
        rr_new = r.dot(r)
        qmodel = g.dot(x) + 0.5 * x.dot(Hx)
        records.append(InnerRecord(i + 1, qmodel, float(np.sqrt(rr_new)), x.norm(), x, Hx))
        LOGGER.debug(f"INNER ITERATION | {i + 1} | q={qmodel:.6e} | residual={np.sqrt(rr_new) / r0:.3e}")
        if np.sqrt(rr_new) <= tol * r0:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, records


@dataclass
class MinimizerRecord:
    outer: int
    inner: int
    J: float
    Jo: float
    Jb: float
    gnorm: float
    stepnorm: float
    qmodel: float


@dataclass
class MinimizerLog:
    records: list = field(default_factory=list)

    def add(self, *args):
        self.records.append(MinimizerRecord(*args))

    def outer_records(self):
        return [r for r in self.records if r.inner == 0]

    @property
    def initial(self):
        return self.records[0]

    @property
    def best(self):
        return min(self.outer_records(), key=lambda r: r.J)

    def inner_monotone(self, rtol=1e-12):
        """True when qmodel never increases inside an inner loop."""
        previous = {}
        for r in self.records:
            if r.inner == 0:
                previous[r.outer] = 0.0
                continue
            last = previous.get(r.outer, 0.0)
            if r.qmodel > last + rtol * max(abs(last), abs(r.qmodel)):
                return False
            previous[r.outer] = r.qmodel
        return True

    def write_csv(self, path):
        write_csv(path, MINLOG_HEADER, (
            (r.outer, r.inner, r.J, r.Jo, r.Jb, r.gnorm, r.stepnorm, r.qmodel) for r in self.records
        ))


def _log_inner(log, outer, breakdown, gb, problem, records):
    """Quadratic-model rows: J and Jb are their second-order expansions at delta."""
    for rec in records:
        hb = problem.background_hessian(rec.step)
        Jb = breakdown.Jb + gb.dot(rec.step) + 0.5 * rec.step.dot(hb)
        J = breakdown.J + rec.qmodel
        log.add(outer, rec.inner, J, J - problem.omega * Jb, Jb, rec.resnorm, rec.stepnorm, rec.qmodel)


def assimilate(problem, outer_loops=5, inner_iters=10, tol=1e-3):
    """
    Runs the incremental minimization from X_b. Returns the analysis (the
    model initial state of the best control seen) and the MinimizerLog.
    """
    X = problem.xb.copy()
    log = MinimizerLog()
    best_X, best_J = X, np.inf
    previous_J = None
    rising = 0
    for outer in range(outer_loops + 1):
        ck = checkpoint_problem(X, problem)
        g, breakdown = grad_cost(X, problem, ck)
        log.add(outer, 0, breakdown.J, breakdown.Jo, breakdown.Jb, breakdown.gnorm, 0.0, 0.0)
        LOGGER.info(
            f"OUTER LOOP | {outer} | J={breakdown.J:.6e} | Jo={breakdown.Jo:.6e} "
            f"| Jb={breakdown.Jb:.6e} | gnorm={breakdown.gnorm:.6e}"
        )
        if breakdown.J < best_J:
            best_X, best_J = X, breakdown.J
        if previous_J is not None and breakdown.J > previous_J:
            rising += 1
        else:
            rising = 0
        if rising >= 2:
            LOGGER.warning(f"DIVERGENCE GUARD | outer={outer} | returning best J={best_J:.6e}")
            break
        previous_J = breakdown.J
        if outer == outer_loops or breakdown.gnorm == 0.0:
            break

        try:
            delta, records = inner_solve(g, lambda d: hessian_vec(d, ck, problem), tol, inner_iters)
        except IndefiniteHessianException as exc:
            LOGGER.error(f"INNER LOOP ABORTED | outer={outer} | {exc}")
            break
        _log_inner(log, outer, breakdown, problem.background_gradient(X), problem, records)
        X = X + delta

    return problem.control_state(best_X), log
