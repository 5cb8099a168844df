"""
Django settings for the floatvar project.

Only the parts of Django the project actually uses are configured here:
the management-command runner, forms (run-config validation), the test
runner and logging. There is no database and no web front end.
"""

from decouple import config
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


SECRET_KEY = config('SECRET_KEY', 'floatvar-local-development-key')

DEBUG = config('ENV', 'prod') != 'prod'
ENV = config('ENV', 'prod')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'floatvar',
]

# No models: the test suite only uses SimpleTestCase
DATABASES = {}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Runs

FLOATVAR_OUTPUT_DIR = Path(config('FLOATVAR_OUTPUT_DIR', str(BASE_DIR / 'runs')))
FLOATVAR_THREADS = config('FLOATVAR_THREADS', 1, cast=int)
FLOATVAR_POISSON_TOL = config('FLOATVAR_POISSON_TOL', 1e-12, cast=float)
FLOATVAR_LOG_LEVEL = config('FLOATVAR_LOG_LEVEL', 'INFO')


#Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            'format': '[%(asctime)s %(name)s] %(levelname)s [%(pathname)s:%(lineno)d] - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'console'
        },
    },
    'loggers': {
        '': {
            'level': 'WARNING',
            'handlers': ['console'],
            'propagate': False
        },
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False
        },
        'floatvar': {
            'handlers': ['console'],
            'level': FLOATVAR_LOG_LEVEL,
            'propagate': False
        },
    }
}
