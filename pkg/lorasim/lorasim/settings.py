"""
Django settings for the lorasim project.

The project has no web surface: Django provides the management command
front end, configuration, logging and the test runner for the simulator
app in ``core``.
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('NODESIM_SECRET_KEY', 'lorasim-local-only-not-a-secret')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'core',
    'django.contrib.contenttypes',
]


# Database
# Only used by ``run --record`` (core.models.SimulationRun).

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('NODESIM_DB_PATH', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Simulator

NODESIM = {
    'PRESETS_DIR': Path(os.environ.get('NODESIM_PRESETS_DIR', BASE_DIR / 'core' / 'presets')),
    'OUTPUT_DIR': Path(os.environ.get('NODESIM_OUTPUT_DIR', 'out')),
    'SIGNIFICANT_DIGITS': int(os.environ.get('NODESIM_SIGNIFICANT_DIGITS', 9)),
    'SWEEP_WORKERS': int(os.environ.get('NODESIM_SWEEP_WORKERS', 1)),
    'RANGE_PDR_THRESHOLD': float(os.environ.get('NODESIM_RANGE_PDR_THRESHOLD', 0.5)),
}


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.environ.get('NODESIM_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}
