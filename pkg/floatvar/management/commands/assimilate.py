from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Incremental 4D-Var of float observations; writes the analysis and minlog.csv"
    subcommand = "assimilate"
