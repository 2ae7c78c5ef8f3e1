# Python Standard Libraries
import os


def plugin_settings(settings):
    """
        Install the pforvec defaults on a settings module or object
    """
    settings.PFORVEC_STEP_BUDGET = int(os.environ.get('PFORVEC_STEP_BUDGET', 10 ** 6))
    settings.PFORVEC_TOLERANCE = 1e-9
    settings.PFORVEC_VERIFY_ITERS = [0, 1, 3, 7]
    settings.PFORVEC_GENERATOR_WEIGHTS = {
        'elementwise': 0.60,
        'linalg': 0.15,
        'control': 0.15,
        'stateful': 0.10,
    }
    settings.PFORVEC_STATEFUL_POLICY = 'error'
    settings.PFORVEC_BENCH_SEED = 0
