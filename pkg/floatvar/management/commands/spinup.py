from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Spin the wind-driven model up from rest and write the final state"
    subcommand = "spinup"
