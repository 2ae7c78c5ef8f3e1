# Python Standard Libraries
import logging

# Installed packages (via pip)
import numpy as np

# Internal project dependencies
from .tensor import DTYPE, TensorValue

logger = logging.getLogger(__name__)


def max_abs_diff(a, b):
    """
        Largest elementwise distance between two tensors, inf when the
        dtypes or shapes differ
    """
    if a.dtype != b.dtype or a.shape != b.shape:
        return float('inf')
    if a.size == 0:
        return 0.0
    if a.dtype == DTYPE.BOOL:
        return float(np.count_nonzero(a.array != b.array))
    left = np.atleast_1d(a.array).astype(np.float64)
    right = np.atleast_1d(b.array).astype(np.float64)
    both_nan = np.isnan(left) & np.isnan(right)
    same_inf = np.isinf(left) & (left == right)
    diff = np.abs(left - right)
    diff[both_nan | same_inf] = 0.0
    diff[np.isnan(diff)] = np.inf
    return float(diff.max())


def tensors_close(a, b, tolerance=1e-9):
    return max_abs_diff(a, b) <= tolerance


def compare_outputs(expected, actual, tolerance=1e-9):
    """
        Return a list of (position, reason) for every mismatching pair
    """
    problems = []
    if len(expected) != len(actual):
        return [(None, f'expected {len(expected)} outputs, got {len(actual)}')]
    for k, (a, b) in enumerate(zip(expected, actual)):
        if a.dtype != b.dtype or a.shape != b.shape:
            problems.append((k, f'expected {a.dtype}{list(a.shape)}, got {b.dtype}{list(b.shape)}'))
            continue
        diff = max_abs_diff(a, b)
        if diff > tolerance:
            problems.append((k, f'max abs diff {diff:.3g} exceeds {tolerance:g}'))
    return problems


def compare_stores(expected, actual, tolerance=1e-9):
    """
        Same as compare_outputs for two variable snapshots keyed by name
    """
    problems = []
    for name in sorted(set(expected) | set(actual)):
        if name not in expected or name not in actual:
            problems.append((name, 'variable missing on one side'))
            continue
        for _, reason in compare_outputs([expected[name]], [actual[name]], tolerance):
            problems.append((name, reason))
    return problems


def format_tensor(value, precision=6):
    if not isinstance(value, TensorValue):
        return str(value)
    body = np.array2string(np.asarray(value.array), precision=precision, separator=', ', suppress_small=True)
    return f'{value.dtype}{list(value.shape)} {body}'


def parse_int_list(text):
    """
        '1,16,256' -> [1, 16, 256]
    """
    return [int(part) for part in str(text).split(',') if part.strip()]


def parse_weights(text):
    """
        'elementwise=0.6,control=0.2' -> {'elementwise': 0.6, 'control': 0.2}
    """
    weights = {}
    for part in str(text).split(','):
        if not part.strip():
            continue
        key, _, value = part.partition('=')
        weights[key.strip()] = float(value)
    return weights
