from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Finite-difference gradient check and adjoint dot-product tests"
    subcommand = "gradcheck"
