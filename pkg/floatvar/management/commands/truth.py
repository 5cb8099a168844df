from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Run the truth over one assimilation window"
    subcommand = "truth"
