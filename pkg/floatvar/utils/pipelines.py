"""
One pipeline per subcommand. Every run writes into its own directory named
by the config digest and a UTC timestamp, starting with the resolved
``config.ini``.
"""
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.utils import timezone

from floatvar.apps import LOGGER
from floatvar.utils.assim import AssimException, assimilate
from floatvar.utils.dynamics import (
    DynamicsException,
    Forcing,
    ModelConfig,
    Recorder,
    integrate,
    project_state,
)
from floatvar.utils.floats import FloatSet, FloatsException, ObsSet
from floatvar.utils.grid import GridException, random_state
from floatvar.utils.run_config import ConfigException, emit_config
from floatvar.utils.snapshots import SnapshotException, read_state, write_csv, write_state
from floatvar.utils.tlm_adjoint import CheckpointException, checkpoint_problem, dot_product_test, gradcheck
from floatvar.utils.twin import (
    TwinException,
    assim_problem,
    ke_series,
    make_background,
    rms_error,
    run_twin,
    spinup,
    synth_obs,
    truth_run,
    write_errors,
    write_ke,
    write_surface,
)
from floatvar.utils.verify import (
    VerifyException,
    check_energy_inequality,
    check_nonlinear_bound,
    check_w_bound,
    picard_integrate,
    relative_l2_difference,
)


class PipelineException(Exception):
    pass


HANDLED = (
    ConfigException,
    PipelineException,
    GridException,
    DynamicsException,
    FloatsException,
    CheckpointException,
    AssimException,
    TwinException,
    VerifyException,
    SnapshotException,
)


def error_line(exc, subcommand):
    message = " ".join(str(exc).split())
    return f"error={type(exc).__name__} subcommand={subcommand} message={message}"


def run_directory(cfg, out=None):
    base = Path(out) if out else Path(settings.FLOATVAR_OUTPUT_DIR)
    name = f"{cfg.digest()[:12]}-{timezone.now().strftime('%Y%m%dT%H%M%S')}"
    path = base / name
    suffix = 0
    while path.exists():
        suffix += 1
        path = base / f"{name}-{suffix}"
    path.mkdir(parents=True)
    (path / "config.ini").write_text(emit_config(cfg), encoding="utf-8")
    return path


def _require(cfg, key):
    value = getattr(cfg.paths, key)
    if not value:
        raise PipelineException(f"missing input: paths.{key} is not set")
    return value


def _read_state(cfg, key):
    X = read_state(_require(cfg, key))
    if X.grid != cfg.grid:
        raise PipelineException(
            f"shape mismatch: paths.{key} holds a {X.grid.shape} grid on a={X.grid.a}, "
            f"config has {cfg.grid.shape} on a={cfg.grid.a}"
        )
    return X


def _recorder(cfg, run_dir, prefix, step_offset=0):
    out_dir = run_dir / "snapshots" if cfg.output.interval else None
    return Recorder(out_dir, prefix, cfg.output.interval, step_offset)


def _initial_state(cfg):
    if cfg.paths.initial_state:
        return _read_state(cfg, "initial_state")
    return spinup(cfg.twin_config)


def _run_spinup(cfg, run_dir):
    tc = cfg.twin_config
    recorder = _recorder(cfg, run_dir, "spinup")
    final = spinup(tc, recorder)
    write_state(run_dir / "spinup_final", final)
    recorder.write_diagnostics(run_dir / "diagnostics.csv")


def _run_truth(cfg, run_dir):
    tc = cfg.twin_config
    X0 = _initial_state(cfg)
    recorder = _recorder(cfg, run_dir, "truth", tc.spinup_steps)
    offset = tc.spinup_steps * tc.dt
    traj = truth_run(tc, start=X0, recorder=recorder, time_offset=offset)
    write_state(run_dir / "truth_initial", traj.initial)
    write_state(run_dir / "truth_final", traj.final)
    recorder.write_diagnostics(run_dir / "diagnostics.csv")
    write_ke(run_dir / "ke_truth.csv", ke_series(traj.states, tc.dt, offset, tc.spinup_steps))


def _run_obs(cfg, run_dir):
    tc = cfg.twin_config
    X0 = _read_state(cfg, "truth") if cfg.paths.truth else _initial_state(cfg)
    traj = truth_run(tc, start=X0)
    write_state(run_dir / "truth_initial", X0)
    obs = synth_obs(traj, tc)
    obs.write_csv(run_dir / "obs.csv")
    obs.deployment.write_csv(run_dir / "floats.csv")


def _read_obs(cfg):
    floats = FloatSet.read_csv(_require(cfg, "floats_file"), cfg.twin.z0)
    floats.check_depth(cfg.grid)
    return ObsSet.read_csv(_require(cfg, "obs"), floats)


def _run_assimilate(cfg, run_dir):
    tc = cfg.twin_config
    background = _read_state(cfg, "background")
    obs = _read_obs(cfg)
    problem = assim_problem(tc, background, obs, cfg.assim, cfg.norm)
    analysis, log = assimilate(problem, cfg.assim.outer_loops, cfg.assim.inner_iters, cfg.assim.tol)
    write_state(run_dir / "analysis", analysis)
    log.write_csv(run_dir / "minlog.csv")


def _run_evaluate(cfg, run_dir):
    tc = cfg.twin_config
    truth0 = read_state(_require(cfg, "truth"))
    analysis0 = read_state(_require(cfg, "analysis"))
    if analysis0.grid != truth0.grid:
        raise PipelineException(
            f"shape mismatch: analysis is {analysis0.grid.shape} on a={analysis0.grid.a}, "
            f"truth is {truth0.grid.shape} on a={truth0.grid.a}"
        )
    offset = tc.spinup_steps * tc.dt
    truth = integrate(truth0, tc.model, tc.window_steps, time_offset=offset)
    analysis = integrate(analysis0, tc.model, tc.window_steps, time_offset=offset)
    errors_an = rms_error(analysis.states, truth.states, tc.dt, "analysis", offset)
    errors_bg = None
    runs = {"truth": truth, "analysis": analysis}
    if cfg.paths.background:
        background0 = read_state(cfg.paths.background)
        if background0.grid != truth0.grid:
            raise PipelineException(
                f"shape mismatch: background is {background0.grid.shape}, truth is {truth0.grid.shape}"
            )
        runs["background"] = integrate(background0, tc.model, tc.window_steps, time_offset=offset)
        errors_bg = rms_error(runs["background"].states, truth.states, tc.dt, "background", offset)
    write_errors(run_dir / "errors.csv", errors_bg, errors_an)
    for label, traj in runs.items():
        write_ke(run_dir / f"ke_{label}.csv", ke_series(traj.states, tc.dt, offset, tc.spinup_steps))
        write_surface(run_dir / f"surface_ke_{label}.csv", traj.final)
    LOGGER.info(f"EVALUATE | final E_u={errors_an.final[0]} | final E_v={errors_an.final[1]}")


def _run_gradcheck(cfg, run_dir):
    tc = cfg.twin_config
    rng = tc.rng()
    truth0 = _initial_state(cfg)
    truth = truth_run(tc, start=truth0)
    obs = synth_obs(truth, tc, rng)
    problem = assim_problem(tc, make_background(truth0, tc.background_scale), obs, cfg.assim, cfg.norm)
    X0 = problem.xb

    rows = gradcheck(X0, problem, rng, cfg.verify.gradcheck_directions, cfg.verify.gradcheck_eps)
    write_csv(run_dir / "gradcheck.csv", ("direction", "analytic", "fd", "relerr"), rows)

    ck = checkpoint_problem(X0, problem)
    defects = [(i, dot_product_test(ck, rng)) for i in range(cfg.verify.dot_tests)]
    write_csv(run_dir / "dottest.csv", ("pair", "defect"), defects)
    LOGGER.info(
        f"GRADCHECK SUMMARY | max relerr={max(r[3] for r in rows):.3e} "
        f"| max dot defect={max(d for _, d in defects):.3e}"
    )


PICARD_RK2_TOL = 1e-3


def _check_wbound(cfg, run_dir, rng):
    v = cfg.verify
    rows = []
    for s in range(v.wbound_samples):
        report = check_w_bound(random_state(cfg.grid, rng))
        rows.append(("random", s, report.lhs, report.rhs, report.passed))
    if v.wbound_steps:
        model = replace(cfg.twin_config.model, dt=v.verify_dt)
        X0 = project_state(random_state(cfg.grid, rng, amplitude=0.1))
        for n, X in enumerate(integrate(X0, model, v.wbound_steps).states):
            report = check_w_bound(X)
            rows.append(("run", n, report.lhs, report.rhs, report.passed))
    write_csv(run_dir / "wbound.csv", ("source", "sample", "lhs", "rhs", "pass"), rows)
    return all(r[4] for r in rows)


def _check_energy(cfg, run_dir, rng):
    linear = ModelConfig(phys=cfg.physics, dt=cfg.verify.verify_dt, linear=True)
    rows = []
    passed = True
    for s in range(cfg.verify.energy_samples):
        X0 = project_state(random_state(cfg.grid, rng))
        F = random_state(cfg.grid, rng)
        report = check_energy_inequality(X0, F, linear, cfg.verify.energy_T, cfg.norm)
        rows.extend((s, n, t, lhs, rhs, margin) for n, t, lhs, rhs, margin in report.rows())
        passed = passed and report.passed
    write_csv(run_dir / "energy.csv", ("sample", "step", "time", "lhs", "rhs", "margin"), rows)
    return passed


def _check_nlbound(cfg, run_dir, rng):
    rows = []
    for s in range(cfg.verify.nlbound_samples):
        X1 = random_state(cfg.grid, rng)
        X2 = random_state(cfg.grid, rng)
        report = check_nonlinear_bound(X1, X2, cfg.norm)
        rows.append((s, *report.rho_components, report.rho, report.rho_self, report.degenerate))
    write_csv(
        run_dir / "nlbound.csv",
        ("sample", "rho_u", "rho_v", "rho_theta", "rho", "rho_self", "degenerate"),
        rows,
    )
    LOGGER.info(f"NLBOUND | max rho={max((r[4] for r in rows), default=0.0):.6e}")
    return True


def _check_picard(cfg, run_dir, rng):
    v = cfg.verify
    X0 = project_state(random_state(cfg.grid, rng, amplitude=v.picard_amplitude))
    model = ModelConfig(phys=cfg.physics, dt=v.verify_dt, linear=False, forcing=Forcing())
    run = picard_integrate(X0, model, v.picard_T, v.picard_max_n, v.picard_tol, cfg.norm)
    reference = integrate(X0, model, len(run.states) - 1)
    difference = relative_l2_difference(run.states, reference.states)
    ratios = [None] + run.ratios
    write_csv(
        run_dir / "picard.csv",
        ("iteration", "residual", "ratio"),
        ((n + 1, r, q) for n, (r, q) in enumerate(zip(run.residuals, ratios))),
    )
    write_csv(
        run_dir / "picard_summary.csv",
        ("t_star", "iterations", "converged", "monotone", "rk2_reldiff"),
        [(run.t_star, run.iterations, run.converged, run.monotone, difference)],
    )
    LOGGER.info(f"PICARD VS RK2 | relative L2 difference={difference:.3e}")
    if difference > PICARD_RK2_TOL:
        LOGGER.warning(f"PICARD VS RK2 | difference {difference:.3e} exceeds {PICARD_RK2_TOL:.0e}")
    return run.converged and run.monotone and difference <= PICARD_RK2_TOL


CHECKS = {
    "wbound": _check_wbound,
    "energy": _check_energy,
    "nlbound": _check_nlbound,
    "picard": _check_picard,
}


def _run_verify(cfg, run_dir):
    rng = cfg.twin_config.rng()
    failed = [name for name in cfg.verify.checks if not CHECKS[name](cfg, run_dir, rng)]
    if failed:
        raise VerifyException(f"checks failed: {','.join(failed)}")


def _run_twin(cfg, run_dir):
    tc = cfg.twin_config
    result = run_twin(tc, cfg.assim, cfg.norm)
    labels = {"truth": "truth", "background": "background_run", "analysis": "analysis_run"}
    ke = {label: [] for label in labels}
    for w, window in enumerate(result.windows):
        suffix = "" if w == 0 else f"_w{w}"
        window.obs.write_csv(run_dir / f"obs{suffix}.csv")
        window.obs.deployment.write_csv(run_dir / f"floats{suffix}.csv")
        window.log.write_csv(run_dir / f"minlog{suffix}.csv")
        write_state(run_dir / f"analysis{suffix}", window.analysis)
        step_offset = tc.spinup_steps + w * tc.window_steps
        for label, attr in labels.items():
            states = getattr(window, attr).states
            rows = ke_series(states, tc.dt, step_offset * tc.dt, step_offset)
            ke[label].extend(rows[1:] if w else rows)
    write_errors(run_dir / "errors.csv", result.errors_background, result.errors_analysis)
    last = result.windows[-1]
    for label, attr in labels.items():
        write_ke(run_dir / f"ke_{label}.csv", ke[label])
        write_surface(run_dir / f"surface_ke_{label}.csv", getattr(last, attr).final)

    first = result.windows[0]
    LOGGER.info(
        f"TWIN SUMMARY | Jo {first.log.initial.Jo:.6e} -> {first.log.best.Jo:.6e} "
        f"| E_u bg={result.errors_background.final[0]} an={result.errors_analysis.final[0]} "
        f"| E_v bg={result.errors_background.final[1]} an={result.errors_analysis.final[1]}"
    )


PIPELINES = {
    "spinup": _run_spinup,
    "truth": _run_truth,
    "obs": _run_obs,
    "assimilate": _run_assimilate,
    "evaluate": _run_evaluate,
    "gradcheck": _run_gradcheck,
    "verify": _run_verify,
    "twin": _run_twin,
}


def execute_pipeline(subcommand, cfg, out=None, threads=1):
    """
    Runs one subcommand. Returns (status, run directory, error line); the
    error line is None on success.
    """
    if subcommand not in PIPELINES:
        exc = PipelineException(f"unknown subcommand '{subcommand}'; choose from {', '.join(PIPELINES)}")
        return 2, None, error_line(exc, subcommand)
    run_dir = None
    try:
        run_dir = run_directory(cfg, out)
        LOGGER.info(f"RUN | {subcommand} | dir={run_dir} | threads={threads} | seed={cfg.twin.seed}")
        PIPELINES[subcommand](cfg, run_dir)
    except HANDLED as exc:
        line = error_line(exc, subcommand)
        LOGGER.error(line)
        return 1, run_dir, line
    except OSError as exc:
        line = error_line(exc, subcommand)
        LOGGER.exception(exc)
        return 1, run_dir, line
    LOGGER.info(f"RUN DONE | {subcommand} | dir={run_dir}")
    return 0, run_dir, None


def run(subcommand, cfg, out=None, threads=1):
    return execute_pipeline(subcommand, cfg, out, threads)[0]
