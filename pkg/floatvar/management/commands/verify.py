from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Numerical checks of the w bound, energy inequality, advection bound and Picard iteration"
    subcommand = "verify"
