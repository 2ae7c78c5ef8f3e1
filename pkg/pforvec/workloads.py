# -*- coding:utf-8 -*-
"""
Desk-scale models used by bench and demo.

Every model is written per example and batched with pfor, so the same body can
be run vectorized, as a sequential fallback loop, or by the interpreter with
the PARFOR block left in place.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import logging

# Installed packages (via pip)
from model_utils import Choices
import numpy as np

# Internal project dependencies
from .api import jacobian, per_example_gradients, pfor
from .exceptions import UnknownModel
from .graph import Graph
from .tensor import DTYPE, tensor
from .vectorizer import Diagnostics, VectorizePolicy


log = logging.getLogger(__name__)

MODELS = Choices('linear', 'mnist_like', 'lstm_unrolled', 'per_example_grad', 'jacobian')
MODES = Choices('vectorized', 'fallback_loop', 'oracle')

LINEAR_DIM = 64
IMAGE = (28, 28, 1)
FILTERS = 4
CLASSES = 10
STEPS = 10
LSTM_INPUT = 16
LSTM_STATE = 32
MLP_SIZES = (8, 16)


@dataclass
class Workload:
    model: str
    mode: str
    batch: int
    graph: Graph
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


def pfor_options(mode, diagnostics=None):
    """Keyword arguments for pfor and friends implementing a bench mode."""
    if mode not in MODES:
        raise ValueError(f'unknown mode {mode!r}')
    if mode == MODES.oracle:
        return {'vectorize': False}
    policy = VectorizePolicy(force_fallback=mode == MODES.fallback_loop)
    return {'policy': policy, 'diagnostics': diagnostics}


def _param(g, rng, shape, scale):
    return g.constant(tensor(rng.normal(0.0, scale, size=shape), DTYPE.F64))


# Linear projection

def linear_params(g, rng, dim=LINEAR_DIM):
    return {'w': _param(g, rng, (dim, dim), 1.0 / np.sqrt(dim))}


def linear_forward(g, x, params):
    """x [d] -> x W [d]."""
    dim = g.spec(params['w']).shape[0]
    row = g.op('reshape', x, shape=[1, dim])
    return g.op('reshape', g.op('matmul', row, params['w']), shape=[dim])


# Conv-relu-pool-dense classifier

def mnist_params(g, rng):
    height, width, channels = IMAGE
    pooled = (height // 2) * (width // 2) * FILTERS
    return {
        'filter': _param(g, rng, (3, 3, channels, FILTERS), 0.3),
        'dense': _param(g, rng, (pooled, CLASSES), 1.0 / np.sqrt(pooled)),
        'bias': _param(g, rng, (CLASSES,), 0.1),
    }


def mnist_forward(g, image, params):
    """image [28, 28, 1] -> logits [10]; pooling is 2x2 averaging."""
    height, width, channels = IMAGE
    x = g.op('reshape', image, shape=[1, height, width, channels])
    x = g.op('relu', g.op('conv2d', x, params['filter']))
    x = g.op('reshape', x, shape=[1, height // 2, 2, width // 2, 2, FILTERS])
    x = g.op('mul', g.op('reduce_sum', x, axes=[2, 4]), g.constant(0.25))
    x = g.op('reshape', x, shape=[1, (height // 2) * (width // 2) * FILTERS])
    logits = g.op('matmul', x, params['dense'])
    return g.op('add', g.op('reshape', logits, shape=[CLASSES]), params['bias'])


def softmax_cross_entropy(g, logits, onehot):
    normalizer = g.op('log', g.op('reduce_sum', g.op('exp', logits), axes=[0]))
    return g.op('sub', normalizer, g.op('reduce_sum', g.op('mul', onehot, logits), axes=[0]))


def mnist_loss(g, image, onehot, params):
    return softmax_cross_entropy(g, mnist_forward(g, image, params), onehot)


# Unrolled LSTM

def lstm_params(g, rng):
    gates = 4 * LSTM_STATE
    return {
        'wx': _param(g, rng, (LSTM_INPUT, gates), 1.0 / np.sqrt(LSTM_INPUT)),
        'wh': _param(g, rng, (LSTM_STATE, gates), 1.0 / np.sqrt(LSTM_STATE)),
        'bias': _param(g, rng, (gates,), 0.1),
    }


def lstm_forward(g, sequence, params, steps=STEPS):
    """sequence [steps, 16] -> final hidden state [32]."""
    h = g.constant(np.zeros((1, LSTM_STATE)))
    c = g.constant(np.zeros((1, LSTM_STATE)))
    for t in range(steps):
        x = g.op('slice', sequence, axis=0, start=t, size=1)
        z = g.op('add', g.op('matmul', x, params['wx']), g.op('matmul', h, params['wh']))
        z = g.op('add', z, params['bias'])
        gate = [g.op('slice', z, axis=1, start=k * LSTM_STATE, size=LSTM_STATE) for k in range(4)]
        keep, write, expose = (g.op('sigmoid', gate[k]) for k in range(3))
        c = g.op('add', g.op('mul', keep, c), g.op('mul', write, g.op('tanh', gate[3])))
        h = g.op('mul', expose, g.op('tanh', c))
    return g.op('reshape', h, shape=[LSTM_STATE])


# Small MLP for jacobians

def mlp_params(g, rng, outputs):
    inputs, hidden = MLP_SIZES
    return {
        'w1': _param(g, rng, (inputs, hidden), 1.0 / np.sqrt(inputs)),
        'b1': _param(g, rng, (hidden,), 0.1),
        'w2': _param(g, rng, (hidden, outputs), 1.0 / np.sqrt(hidden)),
    }


def mlp_forward(g, x, params):
    """x [8] -> [outputs], tanh hidden layer."""
    inputs, hidden = MLP_SIZES
    h = g.op('matmul', g.op('reshape', x, shape=[1, inputs]), params['w1'])
    h = g.op('tanh', g.op('add', g.op('reshape', h, shape=[hidden]), params['b1']))
    out = g.op('matmul', g.op('reshape', h, shape=[1, hidden]), params['w2'])
    return g.op('reshape', out, shape=[g.spec(params['w2']).shape[1]])


def _data(g, rng, shape):
    return g.constant(tensor(rng.uniform(-1.0, 1.0, size=shape), DTYPE.F64))


def _onehots(g, rng, batch):
    labels = rng.integers(CLASSES, size=batch)
    return g.constant(tensor(np.eye(CLASSES)[labels], DTYPE.F64))


def build_workload(model, batch, mode, seed=0):
    """
    Graph computing model over batch examples (for jacobian: batch output
    elements) under the given mode.
    """
    if model not in MODELS:
        raise UnknownModel(f'unknown model {model!r}, expected one of {[key for key, _ in MODELS]}')
    rng = np.random.default_rng(seed)
    g = Graph()
    diagnostics = Diagnostics()
    options = pfor_options(mode, diagnostics)

    if model == MODELS.linear:
        params = linear_params(g, rng)
        xs = _data(g, rng, (batch, LINEAR_DIM))
        outputs = pfor(g, lambda sub, i: linear_forward(sub, sub.op('gather_rows', xs, i), params), batch, **options)
    elif model == MODELS.mnist_like:
        params = mnist_params(g, rng)
        images = _data(g, rng, (batch,) + IMAGE)
        outputs = pfor(g, lambda sub, i: mnist_forward(sub, sub.op('gather_rows', images, i), params), batch, **options)
    elif model == MODELS.lstm_unrolled:
        params = lstm_params(g, rng)
        sequences = _data(g, rng, (batch, STEPS, LSTM_INPUT))
        outputs = pfor(g, lambda sub, i: lstm_forward(sub, sub.op('gather_rows', sequences, i), params),
                       batch, **options)
    elif model == MODELS.per_example_grad:
        params = mnist_params(g, rng)
        images = _data(g, rng, (batch,) + IMAGE)
        onehots = _onehots(g, rng, batch)

        def loss_fn(sub, i):
            return mnist_loss(sub, sub.op('gather_rows', images, i), sub.op('gather_rows', onehots, i), params)

        outputs = per_example_gradients(g, loss_fn, batch, [params['filter'], params['dense'], params['bias']],
                                        **options)
    else:
        params = mlp_params(g, rng, batch)
        x = _data(g, rng, (MLP_SIZES[0],))
        outputs = jacobian(g, mlp_forward(g, x, params), x, **options)

    g.set_outputs(outputs)
    log.debug(f'Workloads - built {model} batch={batch} mode={mode}: {len(g.nodes)} top-level nodes')
    return Workload(model, mode, batch, g, diagnostics)
