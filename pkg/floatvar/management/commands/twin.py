from floatvar.management.base import PipelineCommand


class Command(PipelineCommand):
    help = "Full identical-twin experiment"
    subcommand = "twin"
