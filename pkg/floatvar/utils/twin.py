"""
Identical-twin experiments: a wind-driven truth run, synthetic float
observations drawn from it, a background with wrong velocities, the
assimilation, and relative RMS errors of background and analysis against
the truth.
"""
from dataclasses import dataclass, field

import numpy as np

from floatvar.apps import LOGGER
from floatvar.utils.assim import AssimProblem, assimilate
from floatvar.utils.dynamics import Forcing, ModelConfig, PhysParams, diagnostics_row, integrate
from floatvar.utils.floats import FloatSet, ObsSet, obs_time_indices, observe, wrap_positions
from floatvar.utils.grid import TWO_PI, Grid, NormParams, StateField, inner
from floatvar.utils.snapshots import write_csv

ERRORS_HEADER = ("time", "E_u_bg", "E_v_bg", "E_u_an", "E_v_an")
KE_HEADER = ("step", "time", "ke")
SURFACE_HEADER = ("i", "j", "value")


class TwinException(Exception):
    pass


@dataclass(frozen=True)
class TwinConfig:
    TwinException = TwinException

    grid: Grid = field(default_factory=lambda: Grid(32, 32, 9, 1.0))
    phys: PhysParams = field(default_factory=PhysParams)
    dt: float = 0.05
    tau0: float = 0.1
    depth_profile: tuple = ()
    spinup_steps: int = 400
    window_steps: int = 200
    floats: int = 50
    obs_times: int = 10
    noise_sd: float = 1e-3
    background_scale: float = 0.0
    seed: int = 0
    z0: float = 0.5
    windows: int = 1
    linear: bool = False

    def __post_init__(self):
        if self.floats < 1:
            raise TwinException(f"need at least one float, got {self.floats}")
        if self.obs_times < 1:
            raise TwinException(f"need at least one observation time, got {self.obs_times}")
        if self.obs_times > self.window_steps:
            raise TwinException(
                f"{self.obs_times} observation times do not fit a window of {self.window_steps} steps"
            )
        if self.spinup_steps < 0:
            raise TwinException("spinup_steps must be nonnegative")
        if not 0.0 <= self.background_scale <= 1.0:
            raise TwinException(f"background_scale must lie in [0, 1], got {self.background_scale}")
        if self.noise_sd < 0:
            raise TwinException(f"noise_sd must be nonnegative, got {self.noise_sd}")
        if not 0.0 < self.z0 < self.grid.a:
            raise TwinException(f"z0={self.z0} must lie strictly inside (0, {self.grid.a})")
        if self.windows < 1:
            raise TwinException(f"windows must be >= 1, got {self.windows}")
        if self.seed < 0:
            raise TwinException(f"seed must be nonnegative, got {self.seed}")

    @property
    def model(self):
        return ModelConfig(
            phys=self.phys,
            dt=self.dt,
            linear=self.linear,
            forcing=Forcing("wind", self.tau0, tuple(self.depth_profile)),
        )

    def rng(self):
        return np.random.default_rng(self.seed)


def spinup(cfg, recorder=None):
    """Integrates from rest under the wind for spinup_steps; returns the final state."""
    traj = integrate(StateField.zeros(cfg.grid), cfg.model, cfg.spinup_steps, recorder=recorder)
    LOGGER.info(f"SPINUP | steps={cfg.spinup_steps} | ke={diagnostics_row(0, 0.0, traj.final)['ke']:.6e}")
    return traj.final


def truth_run(cfg, start=None, recorder=None, time_offset=None):
    """Window trajectory of the truth, starting at the spun-up state unless ``start`` is given."""
    X0 = spinup(cfg) if start is None else start
    if time_offset is None:
        time_offset = cfg.spinup_steps * cfg.dt
    return integrate(X0, cfg.model, cfg.window_steps, recorder=recorder, time_offset=time_offset)


def deploy_floats(cfg, rng):
    positions = wrap_positions(rng.uniform(0.0, TWO_PI, size=(cfg.floats, 2)))
    return FloatSet(positions, cfg.z0, np.arange(cfg.floats))


def synth_obs(truth, cfg, rng=None):
    """
    Seeds cfg.floats floats uniformly, advects them through the truth and
    records noisy positions at cfg.obs_times evenly spaced times.
    """
    rng = cfg.rng() if rng is None else rng
    fs0 = deploy_floats(cfg, rng)
    times = obs_time_indices(truth.nsteps, cfg.obs_times)
    predicted = observe(truth, fs0, times)
    ids, steps, positions = [], [], []
    for t in times:
        noisy = predicted[t] + rng.normal(0.0, cfg.noise_sd, size=predicted[t].shape)
        ids.extend(fs0.ids)
        steps.extend([t] * len(fs0))
        positions.append(wrap_positions(noisy))
    obs = ObsSet(ids, steps, np.concatenate(positions), np.full(len(ids), cfg.noise_sd), fs0)
    LOGGER.info(f"SYNTH OBS | floats={len(fs0)} | times={times} | records={len(obs)}")
    return obs


def make_background(truth0, s_b):
    if not 0.0 <= s_b <= 1.0:
        raise TwinException(f"background scale must lie in [0, 1], got {s_b}")
    return StateField(truth0.grid, s_b * truth0.u, s_b * truth0.v, truth0.theta.copy())


@dataclass
class ErrorSeries:
    label: str
    times: list = field(default_factory=list)
    e_u: list = field(default_factory=list)
    e_v: list = field(default_factory=list)

    def extend(self, other, skip_first=False):
        start = 1 if skip_first else 0
        self.times.extend(other.times[start:])
        self.e_u.extend(other.e_u[start:])
        self.e_v.extend(other.e_v[start:])

    @property
    def final(self):
        return self.e_u[-1], self.e_v[-1]


def _relative_rms(run, truth, grid):
    denominator = inner(truth, truth, grid)
    if denominator == 0.0:
        return None
    diff = truth - run
    return float(np.sqrt(inner(diff, diff, grid) / denominator))


def rms_error(run_states, truth_states, dt, label="run", time_offset=0.0):
    """Relative RMS error of u and v against the truth at every time; None where the truth vanishes."""
    if len(run_states) != len(truth_states):
        raise TwinException(f"run has {len(run_states)} states, truth has {len(truth_states)}")
    series = ErrorSeries(label)
    for n, (X, T) in enumerate(zip(run_states, truth_states)):
        if X.grid != T.grid:
            raise TwinException(f"grid mismatch: run {X.grid.shape} vs truth {T.grid.shape}")
        series.times.append(time_offset + n * dt)
        series.e_u.append(_relative_rms(X.u, T.u, T.grid))
        series.e_v.append(_relative_rms(X.v, T.v, T.grid))
    return series


def ke_series(states, dt, time_offset=0.0, step_offset=0):
    return [
        (step_offset + n, time_offset + n * dt, diagnostics_row(n, 0.0, X)["ke"])
        for n, X in enumerate(states)
    ]


def surface_speed(X):
    """(i, j, sqrt(u^2 + v^2)) at the top interior level."""
    speed = np.sqrt(X.u[:, :, 1] ** 2 + X.v[:, :, 1] ** 2)
    return [(i, j, speed[i, j]) for j in range(X.grid.ny) for i in range(X.grid.nx)]


@dataclass
class WindowResult:
    truth: object
    obs: ObsSet
    background: StateField
    analysis: StateField
    log: object
    background_run: object
    analysis_run: object


@dataclass
class TwinResult:
    windows: list = field(default_factory=list)
    errors_background: ErrorSeries = field(default_factory=lambda: ErrorSeries("background"))
    errors_analysis: ErrorSeries = field(default_factory=lambda: ErrorSeries("analysis"))


def assim_problem(cfg, background, obs, assim, norm=None):
    return AssimProblem(
        xb=background,
        cfg=cfg.model,
        nsteps=cfg.window_steps,
        obs=obs,
        sigma_u=assim.sigma("u"),
        sigma_v=assim.sigma("v"),
        sigma_theta=assim.sigma("theta"),
        omega=assim.omega,
        freeze_theta=assim.freeze_theta,
        jb_norm=assim.jb_norm,
        norm=norm or NormParams(),
    )


def run_twin(cfg, assim, norm=None):
    """
    Runs cfg.windows chained windows. Window k > 0 starts from the previous
    truth end, and its background is the previous analysis propagated over
    the previous window.
    """
    rng = cfg.rng()
    result = TwinResult()
    start = spinup(cfg)
    background = None
    offset = cfg.spinup_steps * cfg.dt
    for w in range(cfg.windows):
        truth = truth_run(cfg, start=start, time_offset=offset)
        obs = synth_obs(truth, cfg, rng)
        if background is None:
            background = make_background(truth.initial, cfg.background_scale)
        problem = assim_problem(cfg, background, obs, assim, norm)
        analysis, log = assimilate(problem, assim.outer_loops, assim.inner_iters, assim.tol)

        bg_run = integrate(problem.control_state(background), cfg.model, cfg.window_steps, time_offset=offset)
        an_run = integrate(analysis, cfg.model, cfg.window_steps, time_offset=offset)
        err_bg = rms_error(bg_run.states, truth.states, cfg.dt, "background", offset)
        err_an = rms_error(an_run.states, truth.states, cfg.dt, "analysis", offset)
        result.errors_background.extend(err_bg, skip_first=w > 0)
        result.errors_analysis.extend(err_an, skip_first=w > 0)
        result.windows.append(WindowResult(truth, obs, background, analysis, log, bg_run, an_run))
        LOGGER.info(
            f"TWIN WINDOW | {w} | Jo {log.initial.Jo:.6e} -> {log.best.Jo:.6e} "
            f"| E_u bg={err_bg.final[0]} an={err_an.final[0]} | E_v bg={err_bg.final[1]} an={err_an.final[1]}"
        )

        start = truth.final
        background = an_run.final
        offset += cfg.window_steps * cfg.dt
    return result


def write_errors(path, background, analysis):
    """errors.csv; the background columns stay empty when there is no background series."""
    if background is not None and background.times != analysis.times:
        raise TwinException("background and analysis error series have different times")
    blank = [None] * len(analysis.times)
    e_u_bg = background.e_u if background is not None else blank
    e_v_bg = background.e_v if background is not None else blank
    write_csv(path, ERRORS_HEADER, zip(analysis.times, e_u_bg, e_v_bg, analysis.e_u, analysis.e_v))


def write_ke(path, rows):
    write_csv(path, KE_HEADER, rows)


def write_surface(path, X):
    write_csv(path, SURFACE_HEADER, surface_speed(X))
