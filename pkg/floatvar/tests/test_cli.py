import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from floatvar.utils.grid import Grid, StateField
from floatvar.utils.pipelines import execute_pipeline
from floatvar.utils.run_config import parse_config, read_config
from floatvar.utils.snapshots import read_state, write_state
from floatvar.utils.twin import make_background

SMALL_CONFIG = """
[grid]
nx = 8
ny = 8
nz = 5

[twin]
spinup_steps = 10
window_steps = 6
floats = 3
obs_times = 2

[assim]
outer_loops = 1
inner_iters = 3

[verify]
wbound_samples = 3
wbound_steps = 4
energy_samples = 1
energy_T = 0.03
nlbound_samples = 1
picard_T = 0.05
gradcheck_directions = 2
dot_tests = 2
"""


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)
        self.out = self.tmp / "runs"

    def config(self, extra="", name="run.ini"):
        path = self.tmp / name
        path.write_text(SMALL_CONFIG + extra, encoding="utf-8")
        return path

    def call(self, command, config, **options):
        stdout = StringIO()
        call_command(command, config=str(config), out=str(self.out), stdout=stdout, **options)
        return Path(stdout.getvalue().strip())

    def test_spinup_is_reproducible(self):
        config = self.config()
        first = self.call("spinup", config)
        second = self.call("spinup", config)
        self.assertNotEqual(first, second)
        for name in ("config.ini", "diagnostics.csv", "spinup_final_u.peda", "spinup_final_theta.peda"):
            self.assertTrue((first / name).exists(), name)
        self.assertEqual(
            (first / "spinup_final_u.peda").read_bytes(),
            (second / "spinup_final_u.peda").read_bytes(),
        )
        self.assertEqual(read_config(first / "config.ini"), read_config(config))
        self.assertEqual(len((first / "diagnostics.csv").read_text().splitlines()), 12)

    def test_run_directory_is_named_by_digest(self):
        config = self.config()
        run_dir = self.call("spinup", config, seed=5)
        digest = read_config(config).with_seed(5).digest()
        self.assertTrue(run_dir.name.startswith(digest[:12]))
        self.assertIn("seed = 5", (run_dir / "config.ini").read_text())

    def test_truth(self):
        run_dir = self.call("truth", self.config("\n[output]\ninterval = 3\n"))
        for name in ("truth_initial_u.peda", "truth_final_v.peda", "diagnostics.csv", "ke_truth.csv"):
            self.assertTrue((run_dir / name).exists(), name)
        self.assertTrue((run_dir / "snapshots" / "truth_000012_u.peda").exists())
        self.assertEqual(len((run_dir / "ke_truth.csv").read_text().splitlines()), 8)

    def test_config_errors_exit_with_two(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("spinup", self.config("\n[physics]\nnu = -1\n"))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("error=ConfigException subcommand=spinup", str(ctx.exception))
        self.assertIn("nu must be positive", str(ctx.exception))

        with self.assertRaises(CommandError) as ctx:
            self.call("spinup", self.tmp / "absent.ini")
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("missing input file", str(ctx.exception))

    def test_bad_threads(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("spinup", self.config(), threads=0)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_unknown_subcommand(self):
        with self.assertRaises(CommandError):
            call_command("nosuch")
        status, run_dir, line = execute_pipeline("nosuch", parse_config(SMALL_CONFIG), self.out)
        self.assertEqual(status, 2)
        self.assertIsNone(run_dir)
        self.assertTrue(line.startswith("error=PipelineException subcommand=nosuch"))

    def test_evaluate_rejects_mismatched_grids(self):
        write_state(self.tmp / "truth", StateField.zeros(Grid(8, 8, 5)))
        write_state(self.tmp / "analysis", StateField.zeros(Grid(8, 6, 5)))
        config = self.config(f"\n[paths]\ntruth = {self.tmp / 'truth'}\nanalysis = {self.tmp / 'analysis'}\n")
        with self.assertRaises(CommandError) as ctx:
            self.call("evaluate", config)
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("shape mismatch", str(ctx.exception))

    def test_assimilate_requires_its_inputs(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("assimilate", self.config())
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("paths.background", str(ctx.exception))

    def test_obs_assimilate_evaluate_chain(self):
        obs_dir = self.call("obs", self.config(name="obs.ini"))
        for name in ("obs.csv", "floats.csv", "truth_initial_u.peda"):
            self.assertTrue((obs_dir / name).exists(), name)
        self.assertEqual(len((obs_dir / "obs.csv").read_text().splitlines()), 3 * 2 + 1)

        truth_prefix = obs_dir / "truth_initial"
        write_state(self.tmp / "bg", make_background(read_state(truth_prefix), 0.5))
        assim_config = self.config(
            f"\n[paths]\nbackground = {self.tmp / 'bg'}\nobs = {obs_dir / 'obs.csv'}\n"
            f"floats_file = {obs_dir / 'floats.csv'}\n",
            name="assim.ini",
        )
        assim_dir = self.call("assimilate", assim_config)
        self.assertTrue((assim_dir / "analysis_u.peda").exists())
        minlog = (assim_dir / "minlog.csv").read_text().splitlines()
        self.assertEqual(minlog[0], "outer,inner,J,Jo,Jb,gnorm,stepnorm,qmodel")

        eval_config = self.config(
            f"\n[paths]\ntruth = {truth_prefix}\nanalysis = {assim_dir / 'analysis'}\n"
            f"background = {self.tmp / 'bg'}\n",
            name="eval.ini",
        )
        eval_dir = self.call("evaluate", eval_config)
        errors = (eval_dir / "errors.csv").read_text().splitlines()
        self.assertEqual(errors[0], "time,E_u_bg,E_v_bg,E_u_an,E_v_an")
        self.assertEqual(len(errors), 6 + 2)
        for label in ("truth", "analysis", "background"):
            self.assertTrue((eval_dir / f"ke_{label}.csv").exists(), label)
            self.assertTrue((eval_dir / f"surface_ke_{label}.csv").exists(), label)

    def test_twin(self):
        run_dir = self.call("twin", self.config("\n[twin]\nbackground_scale = 0.5\nwindows = 2\n"))
        for name in ("obs.csv", "obs_w1.csv", "minlog.csv", "minlog_w1.csv", "analysis_w1_u.peda", "errors.csv"):
            self.assertTrue((run_dir / name).exists(), name)
        self.assertEqual(len((run_dir / "errors.csv").read_text().splitlines()), 2 * 6 + 2)
        self.assertEqual(len((run_dir / "ke_analysis.csv").read_text().splitlines()), 2 * 6 + 2)

    def test_twin_reruns_byte_identically(self):
        config = self.config()
        first = self.call("twin", config)
        second = self.call("twin", config)
        self.assertNotEqual(first, second)
        names = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        self.assertEqual(names, sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file()))
        for name in names:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), str(name))

    def test_gradcheck(self):
        run_dir = self.call("gradcheck", self.config())
        rows = (run_dir / "gradcheck.csv").read_text().splitlines()
        self.assertEqual(rows[0], "direction,analytic,fd,relerr")
        self.assertEqual(len(rows), 3)
        for row in rows[1:]:
            self.assertLess(float(row.split(",")[3]), 1e-5)
        defects = (run_dir / "dottest.csv").read_text().splitlines()
        self.assertEqual(len(defects), 3)
        for row in defects[1:]:
            self.assertLess(float(row.split(",")[1]), 1e-12)

    def test_verify(self):
        run_dir = self.call("verify", self.config())
        for name in ("wbound.csv", "energy.csv", "nlbound.csv", "picard.csv", "picard_summary.csv"):
            self.assertTrue((run_dir / name).exists(), name)
        wbound = (run_dir / "wbound.csv").read_text().splitlines()
        self.assertEqual(wbound[0], "source,sample,lhs,rhs,pass")
        self.assertEqual(len(wbound), 1 + 3 + 5)
        self.assertEqual(sum(row.startswith("run,") for row in wbound), 5)
        summary = (run_dir / "picard_summary.csv").read_text().splitlines()
        self.assertEqual(summary[0], "t_star,iterations,converged,monotone,rk2_reldiff")
        self.assertEqual(summary[1].split(",")[2], "True")

    def test_verify_fails_when_picard_disagrees_with_rk2(self):
        config = self.config("\n[verify]\nchecks = picard\n")
        with mock.patch("floatvar.utils.pipelines.PICARD_RK2_TOL", 0.0):
            with self.assertRaises(CommandError) as ctx:
                self.call("verify", config)
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("checks failed: picard", str(ctx.exception))
