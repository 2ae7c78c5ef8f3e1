# -*- coding:utf-8 -*-
"""
User-facing constructs built on PARFOR and the vectorizer.
"""
# Python Standard Libraries
import logging
import math

# Internal project dependencies
from .autodiff import gradient
from .exceptions import ShapeMismatch
from .graph import Ref
from .ops import BLOCK_KINDS
from .vectorizer import vectorize as vectorize_block


log = logging.getLogger(__name__)


def pfor(graph, body, iters, policy=None, registry=None, diagnostics=None, vectorize=True):
    """
    Build body(sub, i) once as the body of a PARFOR block running iters times and
    vectorize it. Returns the stacked outputs: one ref if body returned a single
    ref, a list otherwise. With vectorize=False the PARFOR node is left in place,
    as it is inside another PARFOR body: the outer pfor flattens it.
    """
    returned = {}

    def build(sub, loop_var):
        outputs = body(sub, loop_var)
        returned['single'] = isinstance(outputs, Ref)
        return outputs

    node_id = graph.build_block(BLOCK_KINDS.PARFOR, {'body': build}, iters=iters)
    if vectorize and not graph.inside_parfor():
        outputs = vectorize_block(graph, node_id, policy=policy, registry=registry, diagnostics=diagnostics)
    else:
        outputs = list(graph.nodes[node_id].outputs())
    return outputs[0] if returned['single'] else outputs


def _static_shape(graph, ref, what):
    spec = graph.spec(ref)
    if not spec.static:
        raise ShapeMismatch(f'{what} needs a static shape, got {spec.describe()}')
    return tuple(spec.shape)


def jacobian(graph, output, input, **options):
    """
    d output / d input as a tensor of shape output.shape + input.shape. Iteration
    i of the underlying pfor computes the gradient of the i-th flattened output
    element.
    """
    out_shape = _static_shape(graph, output, 'jacobian output')
    in_shape = _static_shape(graph, input, 'jacobian input')
    m = math.prod(out_shape)

    def body(sub, i):
        flat = sub.op('reshape', output, shape=[-1])
        return gradient(sub, sub.op('gather_rows', flat, i), input)

    rows = pfor(graph, body, m, **options)
    return graph.op('reshape', rows, shape=list(out_shape + in_shape))


def per_example_gradients(graph, loss_fn, batch, wrt, **options):
    """
    loss_fn(sub, i) builds the scalar loss of example i; returns, for each tensor
    in wrt, its gradients stacked over the batch (kept separate, not summed).
    """
    single = isinstance(wrt, Ref)
    targets = [wrt] if single else list(wrt)

    def body(sub, i):
        return gradient(sub, loss_fn(sub, i), targets)

    grads = pfor(graph, body, batch, **options)
    return grads[0] if single else grads


def map_fn(graph, fn, x, **options):
    """Apply fn(sub, row) to every row of x and stack the results."""
    spec = graph.spec(x)
    if spec.shape and spec.shape[0] is not None:
        iters = spec.shape[0]
    else:
        iters = graph.op('dim_size', x)

    def body(sub, i):
        return fn(sub, sub.op('gather_rows', x, i))

    return pfor(graph, body, iters, **options)

