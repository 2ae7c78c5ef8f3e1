"""
Settings used by the pforvec console script and manage.py.
"""
# Python Standard Libraries
import sys

# Internal project dependencies
from .common import plugin_settings

SECRET_KEY = 'pforvec-standalone'
DEBUG = False
USE_TZ = True
INSTALLED_APPS = [
    'pforvec.apps.PforvecConfig',
]
DATABASES = {}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'standard',
            'stream': 'ext://sys.stderr',
        },
    },
    'loggers': {
        'pforvec': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}

plugin_settings(sys.modules[__name__])
