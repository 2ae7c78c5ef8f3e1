# Internal project dependencies
from .standalone import *  # noqa: F401,F403

SECRET_KEY = 'pforvec-test'
LOGGING['loggers']['pforvec']['level'] = 'WARNING'  # noqa: F405
