# -*- coding:utf-8 -*-
"""
Op schema registry: per-kind arity, attribute validation, static dtype/shape
inference and kernel binding.

Shapes seen by inference may be partial: a dim of None is unknown at build time,
and a shape of None means even the rank is unknown.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import logging
import math

# Installed packages (via pip)
from model_utils import Choices
import numpy as np

# Internal project dependencies
from . import tensor as T
from .exceptions import (
    ArityMismatch,
    BadAttr,
    BadPermutation,
    DTypeMismatch,
    IncompatibleShapes,
    RankError,
    UnknownKind,
)
from .tensor import DTYPE, TensorValue


log = logging.getLogger(__name__)

BLOCK_KINDS = Choices(
    ('cond', 'COND', 'cond'),
    ('while', 'WHILE', 'while'),
    ('parfor', 'PARFOR', 'parfor'),
)
BINDING_KINDS = ('capture', 'carried', 'loop_var')
STATEFUL_KINDS = ('read_variable', 'assign', 'assign_add', 'random_uniform')
BINARY_KINDS = tuple(T.BINARY_OPS)
UNARY_KINDS = tuple(T.UNARY_OPS)

VARIADIC = -1
REQUIRED = object()


@dataclass(frozen=True, eq=False)
class TensorSpec:
    """
    Static knowledge about one node output. value is set when the output is a
    build-time constant.
    """
    dtype: str
    shape: tuple = None
    value: TensorValue = field(default=None, repr=False)

    @property
    def rank(self):
        return None if self.shape is None else len(self.shape)

    @property
    def static(self):
        return self.shape is not None and all(d is not None for d in self.shape)

    @property
    def size(self):
        if not self.static:
            return None
        return math.prod(self.shape)

    def describe(self):
        if self.shape is None:
            return f'{self.dtype}[?]'
        dims = ','.join('?' if d is None else str(d) for d in self.shape)
        return f'{self.dtype}[{dims}]'


def spec_of(value):
    return TensorSpec(value.dtype, value.shape, value)


@dataclass
class OpDef:
    kind: str
    arity: int
    attrs: dict
    infer: object
    kernel: object = None
    stateful: bool = False

    def check_arity(self, count):
        if self.arity == VARIADIC:
            if count < 1:
                raise ArityMismatch(f'{self.kind} expects at least one input')
        elif isinstance(self.arity, tuple):
            low, high = self.arity
            if not low <= count <= high:
                raise ArityMismatch(f'{self.kind} expects {low} to {high} inputs, got {count}')
        elif count != self.arity:
            raise ArityMismatch(f'{self.kind} expects {self.arity} inputs, got {count}')

    def validate_attrs(self, attrs):
        unknown = set(attrs) - set(self.attrs)
        if unknown:
            raise BadAttr(f'{self.kind} does not take attrs {sorted(unknown)}')
        normalized = {}
        for name, (check, default) in self.attrs.items():
            if name not in attrs or attrs[name] is None and default is not REQUIRED:
                if default is REQUIRED:
                    raise BadAttr(f'{self.kind} requires attr {name!r}')
                normalized[name] = default
                continue
            try:
                normalized[name] = check(attrs[name])
            except (TypeError, ValueError) as e:
                raise BadAttr(f'{self.kind}: bad value for attr {name!r}, error: {format(str(e))}')
        return normalized


OPS = {}


def register(kind, arity, attrs=None, kernel=None, stateful=False):
    def decorator(infer):
        OPS[kind] = OpDef(kind, arity, dict(attrs or {}), infer, kernel, stateful)
        return infer
    return decorator


def get_op(kind):
    try:
        return OPS[kind]
    except KeyError:
        raise UnknownKind(f'unknown op kind {kind!r}')


def is_known_kind(kind):
    return kind in OPS or kind in BINDING_KINDS or kind in BLOCK_KINDS


def run_kernel(kind, values, attrs):
    result = get_op(kind).kernel(values, attrs)
    if isinstance(result, TensorValue):
        return [result]
    return list(result)


# Attribute checkers

def _int(value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f'expected an integer, got {value!r}')
    return int(value)


def _int_list(value):
    return tuple(_int(v) for v in value)


def _dims(value):
    return tuple(None if v is None else _int(v) for v in value)


def _name(value):
    if not isinstance(value, str) or not value:
        raise TypeError(f'expected a non-empty name, got {value!r}')
    return value


def _dtype(value):
    if value not in DTYPE:
        raise ValueError(f'unknown dtype {value!r}')
    return value


def _tensor(value):
    if not isinstance(value, TensorValue):
        raise TypeError(f'expected a TensorValue, got {type(value).__name__}')
    return value


def _batch_dims(value):
    value = _int(value)
    if value not in (0, 1):
        raise ValueError('batch_dims must be 0 or 1')
    return value


# Partial-shape helpers

def _require(condition, error, message):
    if not condition:
        raise error(message)


def _known(*specs):
    return all(s.shape is not None for s in specs)


def _dim_equal(a, b):
    return a is None or b is None or a == b


def _merge_dim(a, b):
    return b if a is None else a


def _partial_broadcast(a, b):
    if a is None or b is None:
        return None
    rank = max(len(a), len(b))
    a = (1,) * (rank - len(a)) + tuple(a)
    b = (1,) * (rank - len(b)) + tuple(b)
    out = []
    for x, y in zip(a, b):
        if x == 1:
            out.append(y)
        elif y == 1:
            out.append(x)
        elif x is None or y is None:
            out.append(_merge_dim(x, y))
        elif x == y:
            out.append(x)
        else:
            raise IncompatibleShapes(f'cannot broadcast {list(a)} with {list(b)}')
    return tuple(out)


def _axis(axis, rank):
    return T.normalize_axis(axis, rank)


def _index_spec(spec, kind):
    _require(spec.dtype == DTYPE.I64, DTypeMismatch, f'{kind}: index input must be I64, got {spec.dtype}')


def _scalar_count(spec, kind):
    _require(spec.dtype == DTYPE.I64, DTypeMismatch, f'{kind}: count must be I64, got {spec.dtype}')
    _require(spec.shape is None or spec.shape == (), RankError, f'{kind}: count must be a scalar')
    return None if spec.value is None else int(spec.value.item())


def _numeric(spec, kind):
    _require(spec.dtype in T.NUMERIC_DTYPES, DTypeMismatch, f'{kind} expects a numeric input, got {spec.dtype}')


# Sources

@register('constant', 0, {'value': (_tensor, REQUIRED)}, kernel=lambda xs, a: a['value'])
def _infer_constant(specs, attrs, graph):
    return [spec_of(attrs['value'])]


@register('placeholder', 0, {'name': (_name, REQUIRED), 'dtype': (_dtype, DTYPE.F64), 'shape': (_dims, REQUIRED)})
def _infer_placeholder(specs, attrs, graph):
    return [TensorSpec(attrs['dtype'], attrs['shape'])]


# Stateful ops; executed by the interpreter, not by a kernel

def _variable(graph, name, kind):
    variables = graph.root.variables if graph is not None else {}
    if name not in variables:
        raise BadAttr(f'{kind}: unknown variable {name!r}')
    return variables[name]


@register('read_variable', 0, {'name': (_name, REQUIRED)}, stateful=True)
def _infer_read_variable(specs, attrs, graph):
    value = _variable(graph, attrs['name'], 'read_variable')
    return [TensorSpec(value.dtype, value.shape)]


def _infer_update(kind):
    def infer(specs, attrs, graph):
        value = _variable(graph, attrs['name'], kind)
        spec = specs[0]
        _require(spec.dtype == value.dtype, DTypeMismatch,
                 f'{kind}: value dtype {spec.dtype} does not match variable dtype {value.dtype}')
        if kind == 'assign_add':
            _numeric(spec, kind)
        if spec.shape is not None:
            same = len(spec.shape) == len(value.shape) and all(_dim_equal(a, b) for a, b in zip(spec.shape, value.shape))
            _require(same, IncompatibleShapes,
                     f'{kind}: value shape {spec.describe()} does not match variable shape {list(value.shape)}')
        return []
    return infer


register('assign', 1, {'name': (_name, REQUIRED)}, stateful=True)(_infer_update('assign'))
register('assign_add', 1, {'name': (_name, REQUIRED)}, stateful=True)(_infer_update('assign_add'))


@register('random_uniform', (0, 1), {'shape': (_int_list, REQUIRED)}, stateful=True)
def _infer_random_uniform(specs, attrs, graph):
    shape = attrs['shape']
    _require(all(d >= 0 for d in shape), BadAttr, f'random_uniform: negative dim in {list(shape)}')
    if specs:
        return [TensorSpec(DTYPE.F64, (_scalar_count(specs[0], 'random_uniform'),) + shape)]
    return [TensorSpec(DTYPE.F64, shape)]


# Elementwise

def _binary(kind):
    def infer(specs, attrs, graph):
        a, b = specs
        dtype = T.binary_result_dtype(kind, a.dtype, b.dtype)
        return [TensorSpec(dtype, _partial_broadcast(a.shape, b.shape))]
    return infer


def _binary_kernel(kind):
    return lambda xs, attrs: T.binary_elementwise(kind, xs[0], xs[1])


for _kind in BINARY_KINDS:
    register(_kind, 2, kernel=_binary_kernel(_kind))(_binary(_kind))


def _unary(kind):
    def infer(specs, attrs, graph):
        return [TensorSpec(T.unary_result_dtype(kind, specs[0].dtype), specs[0].shape)]
    return infer


def _unary_kernel(kind):
    return lambda xs, attrs: T.unary_elementwise(kind, xs[0])


for _kind in UNARY_KINDS:
    register(_kind, 1, kernel=_unary_kernel(_kind))(_unary(_kind))


@register('cast', 1, {'dtype': (_dtype, REQUIRED)}, kernel=lambda xs, a: T.cast(xs[0], a['dtype']))
def _infer_cast(specs, attrs, graph):
    return [TensorSpec(attrs['dtype'], specs[0].shape)]


# Linear algebra

@register('matmul', 2, kernel=lambda xs, a: T.matmul(xs[0], xs[1]))
def _infer_matmul(specs, attrs, graph):
    a, b = specs
    _require(a.dtype == b.dtype, DTypeMismatch, f'matmul dtype mismatch {a.dtype} vs {b.dtype}')
    _numeric(a, 'matmul')
    if not _known(a, b):
        return [TensorSpec(a.dtype, None)]
    if a.rank == 2 and b.rank == 2:
        _require(_dim_equal(a.shape[1], b.shape[0]), IncompatibleShapes,
                 f'matmul inner dims differ: {a.describe()} x {b.describe()}')
        return [TensorSpec(a.dtype, (a.shape[0], b.shape[1]))]
    if a.rank == 3 and b.rank == 3:
        _require(_dim_equal(a.shape[0], b.shape[0]) and _dim_equal(a.shape[2], b.shape[1]), IncompatibleShapes,
                 f'batch matmul shapes differ: {a.describe()} x {b.describe()}')
        return [TensorSpec(a.dtype, (_merge_dim(a.shape[0], b.shape[0]), a.shape[1], b.shape[2]))]
    raise RankError(f'matmul expects rank 2 x 2 or 3 x 3, got {a.rank} x {b.rank}')


@register('conv2d', 2, kernel=lambda xs, a: T.conv2d(xs[0], xs[1]))
def _infer_conv2d(specs, attrs, graph):
    x, f = specs
    _require(x.dtype == f.dtype, DTypeMismatch, f'conv2d dtype mismatch {x.dtype} vs {f.dtype}')
    _numeric(x, 'conv2d')
    if not _known(x, f):
        return [TensorSpec(x.dtype, None)]
    _require(x.rank == 4 and f.rank == 4, RankError, f'conv2d expects rank-4 operands, got {x.rank} and {f.rank}')
    _require(_dim_equal(x.shape[3], f.shape[2]), IncompatibleShapes,
             f'conv2d channel mismatch: {x.describe()} vs filter {f.describe()}')
    return [TensorSpec(x.dtype, x.shape[:3] + (f.shape[3],))]


@register('conv2d_backprop_input', 2, kernel=lambda xs, a: T.conv2d_backprop_input(xs[0], xs[1]))
def _infer_conv2d_backprop_input(specs, attrs, graph):
    g, f = specs
    _require(g.dtype == f.dtype, DTypeMismatch, f'conv2d_backprop_input dtype mismatch {g.dtype} vs {f.dtype}')
    if not _known(g, f):
        return [TensorSpec(g.dtype, None)]
    _require(g.rank == 4 and f.rank == 4, RankError, 'conv2d_backprop_input expects rank-4 operands')
    _require(_dim_equal(g.shape[3], f.shape[3]), IncompatibleShapes,
             f'conv2d_backprop_input channel mismatch: {g.describe()} vs filter {f.describe()}')
    return [TensorSpec(g.dtype, g.shape[:3] + (f.shape[2],))]


@register('conv2d_backprop_filter', 2, {'filter_shape': (_int_list, REQUIRED)},
          kernel=lambda xs, a: T.conv2d_backprop_filter(xs[0], xs[1], a['filter_shape']))
def _infer_conv2d_backprop_filter(specs, attrs, graph):
    x, g = specs
    _require(x.dtype == g.dtype, DTypeMismatch, f'conv2d_backprop_filter dtype mismatch {x.dtype} vs {g.dtype}')
    _require(len(attrs['filter_shape']) == 2, BadAttr, 'filter_shape must hold two spatial dims')
    if not _known(x, g):
        return [TensorSpec(x.dtype, None)]
    _require(x.rank == g.rank and x.rank in (4, 5), RankError,
             f'conv2d_backprop_filter expects rank-4 or rank-5 operands, got {x.rank} and {g.rank}')
    same = all(_dim_equal(a, b) for a, b in zip(x.shape[:-1], g.shape[:-1]))
    _require(same, IncompatibleShapes, f'conv2d_backprop_filter shape mismatch: {x.describe()} vs {g.describe()}')
    return [TensorSpec(x.dtype, x.shape[:-4] + tuple(attrs['filter_shape']) + (x.shape[-1], g.shape[-1]))]


# Reductions and joins

@register('reduce_sum', 1, {'axes': (_int_list, REQUIRED)}, kernel=lambda xs, a: T.reduce_sum(xs[0], a['axes']))
def _infer_reduce_sum(specs, attrs, graph):
    x = specs[0]
    _numeric(x, 'reduce_sum')
    if x.shape is None:
        return [TensorSpec(x.dtype, None)]
    axes = T.normalize_axes(attrs['axes'], x.rank)
    return [TensorSpec(x.dtype, tuple(d for k, d in enumerate(x.shape) if k not in axes))]


@register('concat', VARIADIC, {'axis': (_int, REQUIRED)}, kernel=lambda xs, a: T.concat(xs, a['axis']))
def _infer_concat(specs, attrs, graph):
    dtypes = {s.dtype for s in specs}
    _require(len(dtypes) == 1, DTypeMismatch, f'concat dtype mismatch: {sorted(dtypes)}')
    if not _known(*specs):
        return [TensorSpec(specs[0].dtype, None)]
    rank = specs[0].rank
    _require(all(s.rank == rank for s in specs), IncompatibleShapes,
             f'concat rank mismatch: {[s.describe() for s in specs]}')
    _require(rank > 0, RankError, 'concat of scalars')
    axis = _axis(attrs['axis'], rank)
    out = list(specs[0].shape)
    for s in specs[1:]:
        for d in range(rank):
            if d != axis:
                _require(_dim_equal(out[d], s.shape[d]), IncompatibleShapes,
                         f'concat shape mismatch: {[v.describe() for v in specs]}')
                out[d] = _merge_dim(out[d], s.shape[d])
    along = [s.shape[axis] for s in specs]
    out[axis] = None if None in along else sum(along)
    return [TensorSpec(specs[0].dtype, tuple(out))]


# Row gather / scatter

@register('gather_rows', 2, {'batch_dims': (_batch_dims, 0)},
          kernel=lambda xs, a: T.gather_rows(xs[0], xs[1], a['batch_dims']))
def _infer_gather_rows(specs, attrs, graph):
    x, idx = specs
    _index_spec(idx, 'gather_rows')
    if not _known(x, idx):
        return [TensorSpec(x.dtype, None)]
    if attrs['batch_dims'] == 0:
        _require(x.rank >= 1, RankError, 'gather_rows from a scalar')
        _require(idx.rank <= 1, RankError, f'gather_rows index must be rank 0 or 1, got {idx.rank}')
        return [TensorSpec(x.dtype, idx.shape + x.shape[1:])]
    _require(x.rank >= 2 and idx.rank in (1, 2), RankError,
             'batched gather_rows expects rank>=2 input and rank 1/2 index')
    _require(_dim_equal(x.shape[0], idx.shape[0]), IncompatibleShapes,
             f'batched gather_rows leading dims differ: {x.describe()} vs {idx.describe()}')
    return [TensorSpec(x.dtype, (_merge_dim(x.shape[0], idx.shape[0]),) + idx.shape[1:] + x.shape[2:])]


def _scatter_rows_kernel(xs, attrs):
    k = (len(xs) - 1) // 2
    return T.scatter_rows(xs[:k], xs[k:2 * k], int(xs[-1].item()))


@register('scatter_rows', VARIADIC, kernel=_scatter_rows_kernel)
def _infer_scatter_rows(specs, attrs, graph):
    _require(len(specs) >= 3 and len(specs) % 2 == 1, ArityMismatch,
             'scatter_rows expects k index sets, k parts and a total')
    k = (len(specs) - 1) // 2
    for idx in specs[:k]:
        _index_spec(idx, 'scatter_rows')
    parts = specs[k:2 * k]
    total = _scalar_count(specs[-1], 'scatter_rows')
    dtypes = {p.dtype for p in parts}
    _require(len(dtypes) == 1, DTypeMismatch, f'scatter_rows dtype mismatch: {sorted(dtypes)}')
    trailing = next((p.shape[1:] for p in parts if p.shape is not None), None)
    if trailing is None:
        return [TensorSpec(parts[0].dtype, None)]
    return [TensorSpec(parts[0].dtype, (total,) + trailing)]


@register('scatter_add_rows', 2, {'total': (_int, REQUIRED), 'batch_dims': (_batch_dims, 0)},
          kernel=lambda xs, a: T.scatter_add_rows(xs[0], xs[1], a['total'], a['batch_dims']))
def _infer_scatter_add_rows(specs, attrs, graph):
    idx, updates = specs
    _index_spec(idx, 'scatter_add_rows')
    _numeric(updates, 'scatter_add_rows')
    if not _known(idx, updates):
        return [TensorSpec(updates.dtype, None)]
    total = attrs['total']
    if attrs['batch_dims'] == 0:
        _require(idx.rank <= 1, RankError, 'scatter_add_rows index must be rank 0 or 1')
        return [TensorSpec(updates.dtype, (total,) + updates.shape[idx.rank:])]
    _require(idx.rank in (1, 2), RankError, 'batched scatter_add_rows expects a rank 1/2 index')
    return [TensorSpec(updates.dtype, (idx.shape[0], total) + updates.shape[idx.rank:])]


@register('update_rows', 3, kernel=lambda xs, a: T.update_rows(xs[0], xs[1], xs[2]))
def _infer_update_rows(specs, attrs, graph):
    acc, idx, rows = specs
    _index_spec(idx, 'update_rows')
    _require(acc.dtype == rows.dtype, DTypeMismatch, f'update_rows dtype mismatch {acc.dtype} vs {rows.dtype}')
    return [TensorSpec(acc.dtype, acc.shape)]


# Restructuring

@register('reshape', 1, {'shape': (_int_list, REQUIRED)}, kernel=lambda xs, a: T.reshape(xs[0], a['shape']))
def _infer_reshape(specs, attrs, graph):
    x = specs[0]
    target = attrs['shape']
    _require(sum(1 for d in target if d == -1) <= 1 and all(d >= -1 for d in target), BadAttr,
             f'invalid reshape target {list(target)}')
    if x.static:
        return [TensorSpec(x.dtype, T.resolve_shape(target, x.size))]
    return [TensorSpec(x.dtype, tuple(None if d == -1 else d for d in target))]


@register('transpose', 1, {'perm': (_int_list, REQUIRED)}, kernel=lambda xs, a: T.transpose(xs[0], a['perm']))
def _infer_transpose(specs, attrs, graph):
    x = specs[0]
    perm = attrs['perm']
    if x.shape is None:
        return [TensorSpec(x.dtype, None)]
    if sorted(perm) != list(range(x.rank)):
        raise BadPermutation(f'{list(perm)} is not a permutation of {x.rank} axes')
    return [TensorSpec(x.dtype, tuple(x.shape[p] for p in perm))]


@register('stack', VARIADIC, {'axis': (_int, 0)}, kernel=lambda xs, a: T.stack(xs, a['axis']))
def _infer_stack(specs, attrs, graph):
    dtypes = {s.dtype for s in specs}
    _require(len(dtypes) == 1, DTypeMismatch, f'stack dtype mismatch: {sorted(dtypes)}')
    if not _known(*specs):
        return [TensorSpec(specs[0].dtype, None)]
    rank = specs[0].rank
    _require(all(s.rank == rank for s in specs), IncompatibleShapes, 'stack inputs differ in rank')
    row = list(specs[0].shape)
    for s in specs[1:]:
        _require(all(_dim_equal(a, b) for a, b in zip(row, s.shape)), IncompatibleShapes,
                 f'stack shape mismatch: {[v.describe() for v in specs]}')
        row = [_merge_dim(a, b) for a, b in zip(row, s.shape)]
    axis = _axis(attrs['axis'], rank + 1)
    row.insert(axis, len(specs))
    return [TensorSpec(specs[0].dtype, tuple(row))]


def _infer_slice_like(x, axis, start, size, kind):
    if x.shape is None:
        return [TensorSpec(x.dtype, None)]
    _require(x.rank > 0, RankError, f'{kind} of a scalar')
    axis = _axis(axis, x.rank)
    dim = x.shape[axis]
    _require(start >= 0 and size >= 0 and (dim is None or start + size <= dim), IncompatibleShapes,
             f'{kind} [{start}, {start + size}) out of range for {x.describe()}')
    out = list(x.shape)
    out[axis] = size
    return [TensorSpec(x.dtype, tuple(out))]


@register('slice_leading', 1, {'n': (_int, REQUIRED), 'axis': (_int, 0)},
          kernel=lambda xs, a: T.slice_leading(xs[0], a['n'], a['axis']))
def _infer_slice_leading(specs, attrs, graph):
    return _infer_slice_like(specs[0], attrs['axis'], 0, attrs['n'], 'slice_leading')


@register('slice', 1, {'axis': (_int, REQUIRED), 'start': (_int, REQUIRED), 'size': (_int, REQUIRED)},
          kernel=lambda xs, a: T.slice_axis(xs[0], a['axis'], a['start'], a['size']))
def _infer_slice(specs, attrs, graph):
    return _infer_slice_like(specs[0], attrs['axis'], attrs['start'], attrs['size'], 'slice')


@register('tile_leading', 2, kernel=lambda xs, a: T.tile_leading(xs[0], xs[1].item()))
def _infer_tile_leading(specs, attrs, graph):
    x, count = specs
    n = _scalar_count(count, 'tile_leading')
    if x.shape is None:
        return [TensorSpec(x.dtype, None)]
    return [TensorSpec(x.dtype, (n,) + x.shape)]


@register('range', 1, kernel=lambda xs, a: T.arange(xs[0].item()))
def _infer_range(specs, attrs, graph):
    return [TensorSpec(DTYPE.I64, (_scalar_count(specs[0], 'range'),))]


@register('dim_size', 1, {'axis': (_int, 0)}, kernel=lambda xs, a: T.dim_size(xs[0], a['axis']))
def _infer_dim_size(specs, attrs, graph):
    x = specs[0]
    value = None
    if x.shape is not None:
        dim = x.shape[_axis(attrs['axis'], x.rank)]
        if dim is not None:
            value = T.scalar(dim, DTYPE.I64)
    return [TensorSpec(DTYPE.I64, (), value)]


@register('nonzero', 1, kernel=lambda xs, a: T.nonzero(xs[0]))
def _infer_nonzero(specs, attrs, graph):
    c = specs[0]
    _require(c.dtype == DTYPE.BOOL, DTypeMismatch, f'nonzero expects BOOL, got {c.dtype}')
    _require(c.shape is None or c.rank == 1, RankError, 'nonzero expects a vector')
    return [TensorSpec(DTYPE.I64, (None,))]


def infer(kind, specs, attrs, graph=None):
    """
    Validate arity and attrs for kind and return (normalized attrs, output specs).
    """
    op = get_op(kind)
    op.check_arity(len(specs))
    attrs = op.validate_attrs(attrs)
    return attrs, op.infer(list(specs), attrs, graph)
