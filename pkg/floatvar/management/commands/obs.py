from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Deploy floats in the truth run and write noisy position observations"
    subcommand = "obs"
