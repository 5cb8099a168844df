import logging
from django.apps import AppConfig

LOGGER = logging.getLogger("floatvar")

class FloatvarConfig(AppConfig):
    name = 'floatvar'
    verbose_name = "Lagrangian float 4D-Var"
