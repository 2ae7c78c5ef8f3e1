# -*- coding:utf-8 -*-
"""
Reverse-mode gradients over straight-line regions.

gradient() walks back from a scalar output to the requested input along F64
edges, then emits the backward computation into the graph it is given. That
graph may be a block subgraph nested below the forward computation: forward
values are then read through captures, which is how jacobian puts the gradient
of one output element in each PARFOR iteration.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import logging

# Internal project dependencies
from . import tensor as T
from .exceptions import NonDifferentiableOp, NonScalarOutput, ShapeMismatch
from .tensor import DTYPE


log = logging.getLogger(__name__)

VJP_RULES = {}


def defvjp(*kinds):
    def decorator(rule):
        for kind in kinds:
            VJP_RULES[kind] = rule
        return rule
    return decorator


@dataclass
class GradTape:
    """Forward nodes of the differentiated region and their accumulated cotangents."""
    graph: object
    order: list = field(default_factory=list)
    cotangents: dict = field(default_factory=dict)

    def accumulate(self, ref, cot):
        current = self.cotangents.get(ref)
        self.cotangents[ref] = cot if current is None else self.graph.op('add', current, cot)


def _static_shape(g, ref, why):
    spec = g.spec(ref)
    if not spec.static:
        raise ShapeMismatch(f'{why} needs a static shape, got {spec.describe()}')
    return tuple(spec.shape)


def _zeros(g, shape):
    return g.constant(T.zeros(shape, DTYPE.F64))


def _canonical(g, ref):
    """Follow capture nodes out to the tensor they stand for."""
    node = g.node(ref)
    while node.kind == 'capture':
        ref = g.owner(node.id).scope.refs[node.attrs['index']]
        node = g.node(ref)
    return ref


def _f64_inputs(g, node):
    return [_canonical(g, r) if g.spec(r).dtype == DTYPE.F64 else None for r in node.inputs]


def unbroadcast(g, cot, in_shape, out_shape):
    """Sum cot (of out_shape) down to in_shape, undoing broadcasting."""
    if in_shape == out_shape:
        return cot
    if in_shape is None or out_shape is None or None in in_shape or None in out_shape:
        raise ShapeMismatch('gradient through broadcasting needs static shapes')
    lead = len(out_shape) - len(in_shape)
    padded = (1,) * lead + tuple(in_shape)
    axes = [k for k, (a, b) in enumerate(zip(padded, out_shape)) if k < lead or (a == 1 and b != 1)]
    if axes:
        cot = g.op('reduce_sum', cot, axes=axes)
    return g.op('reshape', cot, shape=list(in_shape))


# Elementwise

def _shapes(g, node, inputs):
    return [g.spec(r).shape for r in node.inputs], g.spec(node.output()).shape


@defvjp('add', 'sub')
def _vjp_add(g, node, inputs, cot, needs):
    (a_shape, b_shape), out_shape = _shapes(g, node, inputs)
    other = cot if node.kind == 'add' else g.op('neg', cot)
    return [unbroadcast(g, cot, a_shape, out_shape) if needs[0] else None,
            unbroadcast(g, other, b_shape, out_shape) if needs[1] else None]


@defvjp('mul')
def _vjp_mul(g, node, inputs, cot, needs):
    a, b = inputs
    (a_shape, b_shape), out_shape = _shapes(g, node, inputs)
    return [unbroadcast(g, g.op('mul', cot, b), a_shape, out_shape) if needs[0] else None,
            unbroadcast(g, g.op('mul', cot, a), b_shape, out_shape) if needs[1] else None]


@defvjp('div')
def _vjp_div(g, node, inputs, cot, needs):
    a, b = inputs
    (a_shape, b_shape), out_shape = _shapes(g, node, inputs)
    da = db = None
    if needs[0]:
        da = unbroadcast(g, g.op('div', cot, b), a_shape, out_shape)
    if needs[1]:
        quotient = g.op('div', g.op('mul', cot, a), g.op('mul', b, b))
        db = unbroadcast(g, g.op('neg', quotient), b_shape, out_shape)
    return [da, db]


@defvjp('max', 'min')
def _vjp_extremum(g, node, inputs, cot, needs):
    a, b = inputs
    (a_shape, b_shape), out_shape = _shapes(g, node, inputs)
    # ties go to the first operand
    loses = g.op('less', a, b) if node.kind == 'max' else g.op('less', b, a)
    first = g.op('cast', g.op('logical_not', loses), dtype=DTYPE.F64)
    second = g.op('cast', loses, dtype=DTYPE.F64)
    return [unbroadcast(g, g.op('mul', cot, first), a_shape, out_shape) if needs[0] else None,
            unbroadcast(g, g.op('mul', cot, second), b_shape, out_shape) if needs[1] else None]


@defvjp('neg')
def _vjp_neg(g, node, inputs, cot, needs):
    return [g.op('neg', cot)]


@defvjp('exp')
def _vjp_exp(g, node, inputs, cot, needs):
    return [g.op('mul', cot, node.output())]


@defvjp('log')
def _vjp_log(g, node, inputs, cot, needs):
    return [g.op('div', cot, inputs[0])]


@defvjp('relu')
def _vjp_relu(g, node, inputs, cot, needs):
    positive = g.op('less', g.constant(0.0), inputs[0])
    return [g.op('mul', cot, g.op('cast', positive, dtype=DTYPE.F64))]


@defvjp('tanh')
def _vjp_tanh(g, node, inputs, cot, needs):
    slope = g.op('sub', g.constant(1.0), g.op('square', node.output()))
    return [g.op('mul', cot, slope)]


@defvjp('sigmoid')
def _vjp_sigmoid(g, node, inputs, cot, needs):
    out = node.output()
    slope = g.op('mul', out, g.op('sub', g.constant(1.0), out))
    return [g.op('mul', cot, slope)]


@defvjp('square')
def _vjp_square(g, node, inputs, cot, needs):
    return [g.op('mul', cot, g.op('mul', g.constant(2.0), inputs[0]))]


@defvjp('cast')
def _vjp_cast(g, node, inputs, cot, needs):
    return [cot]


# Linear algebra

@defvjp('matmul')
def _vjp_matmul(g, node, inputs, cot, needs):
    a, b = inputs
    perm = [1, 0] if g.spec(a).rank == 2 else [0, 2, 1]
    da = g.op('matmul', cot, g.op('transpose', b, perm=perm)) if needs[0] else None
    db = g.op('matmul', g.op('transpose', a, perm=perm), cot) if needs[1] else None
    return [da, db]


def _filter_window(g, f):
    return list(_static_shape(g, f, 'filter gradient')[:2])


@defvjp('conv2d')
def _vjp_conv2d(g, node, inputs, cot, needs):
    x, f = inputs
    dx = g.op('conv2d_backprop_input', cot, f) if needs[0] else None
    df = g.op('conv2d_backprop_filter', x, cot, filter_shape=_filter_window(g, f)) if needs[1] else None
    return [dx, df]


@defvjp('conv2d_backprop_input')
def _vjp_conv2d_backprop_input(g, node, inputs, cot, needs):
    grad, f = inputs
    dg = g.op('conv2d', cot, f) if needs[0] else None
    df = g.op('conv2d_backprop_filter', cot, grad, filter_shape=_filter_window(g, f)) if needs[1] else None
    return [dg, df]


@defvjp('conv2d_backprop_filter')
def _vjp_conv2d_backprop_filter(g, node, inputs, cot, needs):
    x, grad = inputs
    if g.spec(x).rank != 4:
        raise NonDifferentiableOp('gradient of a batched conv2d_backprop_filter', node_id=node.id)
    dx = g.op('conv2d_backprop_input', grad, cot) if needs[0] else None
    dg = g.op('conv2d', x, cot) if needs[1] else None
    return [dx, dg]


# Reductions and joins

@defvjp('reduce_sum')
def _vjp_reduce_sum(g, node, inputs, cot, needs):
    shape = _static_shape(g, inputs[0], 'reduce_sum gradient')
    axes = T.normalize_axes(node.attrs['axes'], len(shape))
    kept = [1 if k in axes else d for k, d in enumerate(shape)]
    return [g.op('add', g.op('reshape', cot, shape=kept), _zeros(g, shape))]


def _pad_along(g, cot, shape, axis, start, size):
    """cot occupies [start, start + size) of a zero tensor of shape along axis."""
    pieces = []
    if start > 0:
        pieces.append(_zeros(g, shape[:axis] + (start,) + shape[axis + 1:]))
    pieces.append(cot)
    after = shape[axis] - start - size
    if after > 0:
        pieces.append(_zeros(g, shape[:axis] + (after,) + shape[axis + 1:]))
    if len(pieces) == 1:
        return cot
    return g.op('concat', *pieces, axis=axis)


@defvjp('concat')
def _vjp_concat(g, node, inputs, cot, needs):
    out_rank = len(_static_shape(g, node.output(), 'concat gradient'))
    axis = T.normalize_axis(node.attrs['axis'], out_rank)
    grads, start = [], 0
    for k, r in enumerate(node.inputs):
        size = _static_shape(g, r, 'concat gradient')[axis]
        grads.append(g.op('slice', cot, axis=axis, start=start, size=size) if needs[k] else None)
        start += size
    return grads


@defvjp('slice', 'slice_leading')
def _vjp_slice(g, node, inputs, cot, needs):
    shape = _static_shape(g, inputs[0], 'slice gradient')
    axis = T.normalize_axis(node.attrs['axis'], len(shape))
    if node.kind == 'slice':
        start, size = node.attrs['start'], node.attrs['size']
    else:
        start, size = 0, node.attrs['n']
    return [_pad_along(g, cot, shape, axis, start, size)]


@defvjp('stack')
def _vjp_stack(g, node, inputs, cot, needs):
    shape = _static_shape(g, inputs[0], 'stack gradient')
    axis = T.normalize_axis(node.attrs['axis'], len(shape) + 1)
    return [g.op('reshape', g.op('slice', cot, axis=axis, start=k, size=1), shape=list(shape)) if needs[k] else None
            for k in range(len(inputs))]


# Row gather / scatter

@defvjp('gather_rows')
def _vjp_gather_rows(g, node, inputs, cot, needs):
    x, idx = node.inputs
    batch_dims = node.attrs['batch_dims']
    total = _static_shape(g, x, 'gather_rows gradient')[batch_dims]
    return [g.op('scatter_add_rows', idx, cot, total=total, batch_dims=batch_dims), None]


@defvjp('scatter_add_rows')
def _vjp_scatter_add_rows(g, node, inputs, cot, needs):
    idx = node.inputs[0]
    return [None, g.op('gather_rows', cot, idx, batch_dims=node.attrs['batch_dims'])]


@defvjp('scatter_rows')
def _vjp_scatter_rows(g, node, inputs, cot, needs):
    k = (len(node.inputs) - 1) // 2
    grads = [None] * len(node.inputs)
    for j in range(k):
        if needs[k + j]:
            grads[k + j] = g.op('gather_rows', cot, node.inputs[j])
    return grads


@defvjp('update_rows')
def _vjp_update_rows(g, node, inputs, cot, needs):
    idx = node.inputs[1]
    picked = g.op('gather_rows', cot, idx)
    d_acc = g.op('update_rows', cot, idx, g.op('mul', picked, g.constant(0.0))) if needs[0] else None
    return [d_acc, None, picked if needs[2] else None]


# Restructuring

@defvjp('transpose')
def _vjp_transpose(g, node, inputs, cot, needs):
    perm = node.attrs['perm']
    inverse = [perm.index(k) for k in range(len(perm))]
    return [g.op('transpose', cot, perm=inverse)]


@defvjp('reshape')
def _vjp_reshape(g, node, inputs, cot, needs):
    return [g.op('reshape', cot, shape=list(_static_shape(g, inputs[0], 'reshape gradient')))]


@defvjp('tile_leading')
def _vjp_tile_leading(g, node, inputs, cot, needs):
    return [g.op('reduce_sum', cot, axes=[0]), None]


def _forward_region(g, output, wrt):
    """
    Nodes between wrt and output in reverse topological order, following F64
    edges only, plus the set of refs that depend on wrt.
    """
    postorder, seen, live = [], set(), set()
    if output == wrt:
        return postorder, live
    root = g.node(output)
    seen.add(root.id)
    # frames of [node, pending inputs, reaches wrt]
    stack = [[root, iter(_f64_inputs(g, root)), False]]
    while stack:
        frame = stack[-1]
        node, pending = frame[0], frame[1]
        for r in pending:
            if r is None:
                continue
            if r == wrt:
                frame[2] = True
                continue
            child = g.node(r)
            if child.id in seen:
                frame[2] = frame[2] or child.id in live
                continue
            seen.add(child.id)
            stack.append([child, iter(_f64_inputs(g, child)), False])
            break
        else:
            stack.pop()
            if frame[2]:
                live.add(node.id)
                postorder.append(node)
                if stack:
                    stack[-1][2] = True
    return list(reversed(postorder)), live


def gradient(g, output, wrt):
    """
    Emit into g the gradient of the F64 scalar output with respect to wrt and
    return its ref (same shape as wrt); a list of refs gives a list of gradients.
    All refs may belong to g or to any graph enclosing it. When output does not
    depend on a wrt tensor its gradient is zeros.
    """
    spec = g.spec(output)
    if spec.dtype != DTYPE.F64 or spec.shape != ():
        raise NonScalarOutput(f'gradient needs an F64 scalar output, got {spec.describe()}')
    if isinstance(wrt, (list, tuple)):
        return [_gradient(g, output, w) for w in wrt]
    return _gradient(g, output, wrt)


def _gradient(g, output, wrt):
    output, wrt = _canonical(g, output), _canonical(g, wrt)
    wrt_spec = g.spec(wrt)
    if wrt_spec.dtype != DTYPE.F64:
        raise NonDifferentiableOp(f'cannot differentiate with respect to a {wrt_spec.dtype} tensor')
    order, live = _forward_region(g, output, wrt)
    tape = GradTape(g, order)
    tape.accumulate(output, g.constant(1.0))
    for node in tape.order:
        if node.block is not None or node.kind not in VJP_RULES:
            raise NonDifferentiableOp(f'no gradient for {node.kind}', node_id=node.id)
        cot = tape.cotangents.get(node.output())
        if cot is None:
            continue
        inputs = _f64_inputs(g, node)
        needs = [r is not None and (r == wrt or r.node in live) for r in inputs]
        grads = VJP_RULES[node.kind](g, node, inputs, cot, needs)
        for r, needed, grad in zip(inputs, needs, grads):
            if needed and grad is not None:
                tape.accumulate(r, grad)
    result = tape.cotangents.get(wrt)
    if result is None:
        log.debug(f'Autodiff - {output!r} does not depend on {wrt!r}')
        return _zeros(g, _static_shape(g, wrt, 'zero gradient'))
    return result
