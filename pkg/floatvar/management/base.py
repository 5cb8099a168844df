from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from floatvar.apps import LOGGER
from floatvar.utils.pipelines import error_line, execute_pipeline
from floatvar.utils.run_config import ConfigException, parse_config, read_config


class PipelineCommand(BaseCommand):
    """Shared flags and error handling of the floatvar subcommands."""
    subcommand = None

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None, help="run configuration file (defaults apply when omitted)")
        parser.add_argument("--out", default=None, help="parent directory of the run directory")
        parser.add_argument("--threads", type=int, default=settings.FLOATVAR_THREADS)
        parser.add_argument("--seed", type=int, default=None, help="overrides [twin] seed")

    def load_config(self, options):
        cfg = read_config(options["config"]) if options["config"] else parse_config("")
        if options["seed"] is not None:
            cfg = cfg.with_seed(options["seed"])
        if options["threads"] < 1:
            raise ConfigException(f"--threads must be >= 1, got {options['threads']}")
        return cfg

    def handle(self, *args, **options):
        try:
            cfg = self.load_config(options)
        except ConfigException as exc:
            line = error_line(exc, self.subcommand)
            LOGGER.error(line)
            raise CommandError(line, returncode=2)

        status, run_dir, line = execute_pipeline(self.subcommand, cfg, options["out"], options["threads"])
        if status:
            raise CommandError(line, returncode=status)
        self.stdout.write(str(run_dir))
