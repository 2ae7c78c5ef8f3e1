# -*- coding:utf-8 -*-
"""
Stateless converters: per-kind rules producing batched nodes for a body node
with at least one stacked input.

A row shape is the shape a value has inside one iteration; stacked values add a
leading iteration axis in front of it. Converters that need concrete row shapes
raise NeedsFallback when they are not static.
"""
# Python Standard Libraries
import logging

# Internal project dependencies
from . import ops
from .exceptions import VectorizeError
from .tensor import DTYPE
from .vectorizer import DEFAULT_REGISTRY, PATHS, NeedsFallback, stacked, unstacked


log = logging.getLogger(__name__)

register = DEFAULT_REGISTRY.register


def _rows(ctx, node):
    """Row specs of the node inputs."""
    return [ctx.spec(r) for r in node.inputs]


def _static_row(spec):
    if not spec.static:
        raise NeedsFallback(f'needs a static row shape, got {spec.describe()}')
    return tuple(spec.shape)


def _known_rank(spec):
    if spec.shape is None:
        raise NeedsFallback('needs a known row rank')
    return len(spec.shape)


def _shift(axis):
    return axis + 1 if axis >= 0 else axis


def _fold(ctx, ref, row):
    """[n, d0, d1, ...] -> [n * d0, d1, ...]."""
    return ctx.emit('reshape', ref, shape=[ctx.leading(row[0], row[1:])] + list(row[1:]))


def _unfold(ctx, ref, row):
    """[n * d0, d1, ...] -> [n, d0, d1, ...]."""
    return ctx.emit('reshape', ref, shape=[ctx.leading(1, row)] + list(row))


# Elementwise

@register(*ops.BINARY_KINDS)
def convert_binary(ctx, node, inputs):
    """
    The leading iteration axis lines up only when both operands have the same row
    rank, so a stacked operand of lower row rank gets 1-dims inserted after its
    leading axis. An unstacked operand broadcasts against the row dims as is.
    """
    specs = _rows(ctx, node)
    mixed = not all(w.stacked for w in inputs)
    if mixed and not ctx.policy.fast_paths:
        inputs = [stacked(ctx.materialize(w)) for w in inputs]
    rank = max(_known_rank(s) for s in specs)
    args = []
    for w, spec in zip(inputs, specs):
        ref = w.ref
        if w.stacked and spec.rank < rank:
            row = _static_row(spec)
            padded = (1,) * (rank - len(row)) + row
            ref = ctx.emit('reshape', ref, shape=[ctx.leading(1, padded)] + list(padded))
        args.append(ref)
    ctx.diagnostics.record(node, PATHS.fast if mixed and ctx.policy.fast_paths else PATHS.generic)
    return [stacked(ctx.emit(node.kind, *args))]


@register(*ops.UNARY_KINDS)
def convert_unary(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    return [stacked(ctx.emit(node.kind, inputs[0].ref))]


@register('cast')
def convert_cast(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    return [stacked(ctx.emit('cast', inputs[0].ref, dtype=node.attrs['dtype']))]


# Row gather / scatter

def _batched_gather(ctx, x, idx):
    """Both operands stacked; row b of the result gathers from row b of x."""
    return ctx.emit('gather_rows', x, idx, batch_dims=1)


@register('gather_rows')
def convert_gather_rows(ctx, node, inputs):
    x, idx = inputs
    x_row, idx_row = _rows(ctx, node)
    if node.attrs['batch_dims'] == 1:
        x_shape, idx_shape = _static_row(x_row), _static_row(idx_row)
        xs = _fold(ctx, ctx.materialize(x), x_shape)
        flat = _fold(ctx, ctx.materialize(idx), idx_shape)
        out = _batched_gather(ctx, xs, flat)
        ctx.diagnostics.record(node, PATHS.generic, 'folded batch gather')
        return [stacked(_unfold(ctx, out, _static_row(node.specs[0])))]
    if not x.stacked and idx.stacked and ctx.policy.fast_paths and idx_row.rank == 0:
        if idx == ctx.lvr and ctx.lvr_identity and ctx.static_iters is not None and x_row.static:
            n, rows = ctx.static_iters, x_row.shape[0]
            ctx.diagnostics.record(node, PATHS.fast, 'gather by the loop variable')
            if rows == n:
                return [stacked(x.ref)]
            return [stacked(ctx.emit('slice_leading', x.ref, n=n))]
        ctx.diagnostics.record(node, PATHS.fast, 'gather of an invariant table')
        return [stacked(ctx.emit('gather_rows', x.ref, idx.ref))]
    ctx.diagnostics.record(node, PATHS.generic)
    return [stacked(_batched_gather(ctx, ctx.materialize(x), ctx.materialize(idx)))]


@register('scatter_add_rows')
def convert_scatter_add_rows(ctx, node, inputs):
    if node.attrs['batch_dims'] != 0:
        raise NeedsFallback('nested batched scatter_add_rows')
    idx, updates = (ctx.materialize(w) for w in inputs)
    ctx.diagnostics.record(node, PATHS.generic)
    return [stacked(ctx.emit('scatter_add_rows', idx, updates, total=node.attrs['total'], batch_dims=1))]


# Linear algebra

@register('matmul')
def convert_matmul(ctx, node, inputs):
    """
    Stacked lhs against an invariant matrix folds the iterations into the rows of
    one plain matmul; an invariant lhs against a stacked rhs does the same on the
    transposed problem. Everything else is a batch matmul.
    """
    a, b = inputs
    a_row, b_row = (_static_row(s) for s in _rows(ctx, node))
    if len(a_row) == 3:
        lhs = _fold(ctx, ctx.materialize(a), a_row)
        rhs = _fold(ctx, ctx.materialize(b), b_row)
        out = ctx.emit('matmul', lhs, rhs)
        ctx.diagnostics.record(node, PATHS.generic, 'folded batch matmul')
        return [stacked(_unfold(ctx, out, _static_row(node.specs[0])))]
    x, y = a_row
    z = b_row[1]
    if ctx.policy.fast_paths and a.stacked and not b.stacked:
        flat = ctx.emit('reshape', a.ref, shape=[ctx.leading(x, (y,)), y])
        out = ctx.emit('matmul', flat, b.ref)
        ctx.diagnostics.record(node, PATHS.fast, 'stacked lhs')
        return [stacked(_unfold(ctx, out, (x, z)))]
    if ctx.policy.fast_paths and b.stacked and not a.stacked:
        bt = ctx.emit('transpose', b.ref, perm=[0, 2, 1])
        flat = ctx.emit('reshape', bt, shape=[ctx.leading(z, (y,)), y])
        out = ctx.emit('matmul', flat, ctx.emit('transpose', a.ref, perm=[1, 0]))
        out = _unfold(ctx, out, (z, x))
        ctx.diagnostics.record(node, PATHS.fast, 'stacked rhs')
        return [stacked(ctx.emit('transpose', out, perm=[0, 2, 1]))]
    ctx.diagnostics.record(node, PATHS.generic, 'batch matmul')
    return [stacked(ctx.emit('matmul', ctx.materialize(a), ctx.materialize(b)))]


def _folded_conv(kind):
    def convert(ctx, node, inputs):
        x, f = inputs
        if f.stacked:
            raise NeedsFallback(f'{kind} with a loop-variant filter')
        x_row = _static_row(_rows(ctx, node)[0])
        out = ctx.emit(kind, _fold(ctx, x.ref, x_row), f.ref)
        ctx.diagnostics.record(node, PATHS.fast, 'iterations folded into the batch')
        return [stacked(_unfold(ctx, out, _static_row(node.specs[0])))]
    return convert


register('conv2d')(_folded_conv('conv2d'))
register('conv2d_backprop_input')(_folded_conv('conv2d_backprop_input'))


@register('conv2d_backprop_filter')
def convert_conv2d_backprop_filter(ctx, node, inputs):
    if _known_rank(_rows(ctx, node)[0]) != 4:
        raise NeedsFallback('conv2d_backprop_filter of batched problems')
    x, g = (ctx.materialize(w) for w in inputs)
    ctx.diagnostics.record(node, PATHS.generic, 'one filter gradient per iteration')
    return [stacked(ctx.emit('conv2d_backprop_filter', x, g, filter_shape=list(node.attrs['filter_shape'])))]


# Axis renumbering

@register('reduce_sum')
def convert_reduce_sum(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    axes = [_shift(a) for a in node.attrs['axes']]
    return [stacked(ctx.emit('reduce_sum', inputs[0].ref, axes=axes))]


@register('concat')
def convert_concat(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.generic if not all(w.stacked for w in inputs) else PATHS.fast)
    parts = [ctx.materialize(w) for w in inputs]
    return [stacked(ctx.emit('concat', *parts, axis=_shift(node.attrs['axis'])))]


@register('stack')
def convert_stack(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.generic if not all(w.stacked for w in inputs) else PATHS.fast)
    parts = [ctx.materialize(w) for w in inputs]
    return [stacked(ctx.emit('stack', *parts, axis=_shift(node.attrs['axis'])))]


@register('slice_leading')
def convert_slice_leading(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    return [stacked(ctx.emit('slice_leading', inputs[0].ref, n=node.attrs['n'], axis=_shift(node.attrs['axis'])))]


@register('slice')
def convert_slice(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    attrs = dict(node.attrs, axis=_shift(node.attrs['axis']))
    return [stacked(ctx.emit('slice', inputs[0].ref, **attrs))]


@register('reshape')
def convert_reshape(ctx, node, inputs):
    row = _static_row(node.specs[0])
    ctx.diagnostics.record(node, PATHS.fast)
    return [stacked(ctx.emit('reshape', inputs[0].ref, shape=[ctx.leading(1, row)] + list(row)))]


@register('transpose')
def convert_transpose(ctx, node, inputs):
    ctx.diagnostics.record(node, PATHS.fast)
    perm = [0] + [p + 1 for p in node.attrs['perm']]
    return [stacked(ctx.emit('transpose', inputs[0].ref, perm=perm))]


@register('tile_leading')
def convert_tile_leading(ctx, node, inputs):
    x, count = inputs
    if count.stacked:
        raise NeedsFallback('loop-variant tile count')
    rank = _known_rank(_rows(ctx, node)[0])
    tiled = ctx.emit('tile_leading', x.ref, count.ref)
    ctx.diagnostics.record(node, PATHS.fast)
    return [stacked(ctx.emit('transpose', tiled, perm=[1, 0] + list(range(2, rank + 2))))]


@register('dim_size')
def convert_dim_size(ctx, node, inputs):
    # all rows of a stacked value share one shape
    ctx.diagnostics.record(node, PATHS.fast)
    return [unstacked(ctx.emit('dim_size', inputs[0].ref, axis=_shift(node.attrs['axis'])))]


# Row bookkeeping emitted by converted control flow

def _row_offsets(ctx, size):
    """[iters, 1] column holding b * size for row b."""
    rows = ctx.emit('reshape', ctx.emit('range', ctx.iters), shape=[-1, 1])
    return ctx.emit('mul', rows, size)


def _flat_index(ctx, idx, size):
    """Index vectors per row shifted to address rows of the folded operand."""
    return ctx.emit('reshape', ctx.emit('add', _row_offsets(ctx, size), idx.ref), shape=[-1])


@register('update_rows')
def convert_update_rows(ctx, node, inputs):
    acc, idx, rows = inputs
    acc_spec, idx_spec, rows_spec = _rows(ctx, node)
    if idx_spec.rank != 1:
        raise NeedsFallback('batched update_rows needs an index vector')
    acc_row, rows_row = _static_row(acc_spec), _static_row(rows_spec)
    flat_acc = _fold(ctx, ctx.materialize(acc), acc_row)
    flat_rows = _fold(ctx, ctx.materialize(rows), rows_row)
    index = _flat_index(ctx, idx, ctx.constant(acc_row[0], DTYPE.I64))
    ctx.diagnostics.record(node, PATHS.generic, 'folded row update')
    return [stacked(_unfold(ctx, ctx.emit('update_rows', flat_acc, index, flat_rows), acc_row))]


@register('scatter_rows')
def convert_scatter_rows(ctx, node, inputs):
    k = (len(inputs) - 1) // 2
    total = inputs[-1]
    if total.stacked:
        raise NeedsFallback('loop-variant scatter_rows total')
    specs = _rows(ctx, node)
    out_row = _static_row(node.specs[0])
    index = [_flat_index(ctx, w, total.ref) for w in inputs[:k]]
    parts = [_fold(ctx, ctx.materialize(w), _static_row(s)) for w, s in zip(inputs[k:2 * k], specs[k:2 * k])]
    out = ctx.emit('scatter_rows', *index, *parts, ctx.emit('mul', ctx.iters, total.ref))
    ctx.diagnostics.record(node, PATHS.generic, 'folded row scatter')
    return [stacked(_unfold(ctx, out, out_row))]


@register('nonzero', 'range')
def convert_ragged(ctx, node, inputs):
    raise VectorizeError(f'{node.kind} of a loop-variant input has rows of different lengths')
