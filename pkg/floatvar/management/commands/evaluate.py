from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Relative RMS errors of an analysis (and background) against the truth"
    subcommand = "evaluate"
