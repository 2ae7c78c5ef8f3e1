# -*- coding:utf-8 -*-
"""
Dense tensor values and the eager kernels every graph op lowers to.

Kernels are pure functions over immutable TensorValues; they know nothing about
graphs. Layout is numpy's row-major order.
"""
# Python Standard Libraries
from dataclasses import dataclass
import logging
import math

# Installed packages (via pip)
from model_utils import Choices
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Internal project dependencies
from .exceptions import (
    AxisOutOfRange,
    BadPermutation,
    DTypeMismatch,
    DuplicateAxis,
    IncompatibleShapes,
    IncompleteCover,
    IndexCollision,
    IndexOutOfBounds,
    RankError,
)


log = logging.getLogger(__name__)

DTYPE = Choices('F64', 'I64', 'BOOL')
NUMPY_DTYPES = {
    DTYPE.F64: np.float64,
    DTYPE.I64: np.int64,
    DTYPE.BOOL: np.bool_,
}
NUMERIC_DTYPES = (DTYPE.F64, DTYPE.I64)


@dataclass(frozen=True, eq=False)
class TensorValue:
    """
    An immutable dense tensor: one dtype, one shape, one row-major buffer.
    """
    dtype: str
    array: np.ndarray

    def __post_init__(self):
        if self.dtype not in NUMPY_DTYPES:
            raise DTypeMismatch(f'unknown dtype {self.dtype!r}')
        array = np.asarray(self.array, dtype=NUMPY_DTYPES[self.dtype]).view()
        array.setflags(write=False)
        object.__setattr__(self, 'array', array)

    @property
    def shape(self):
        return tuple(self.array.shape)

    @property
    def rank(self):
        return self.array.ndim

    @property
    def size(self):
        return int(self.array.size)

    @property
    def data(self):
        """Flat row-major buffer as a python list."""
        return self.array.ravel().tolist()

    def item(self):
        return self.array.item()

    def __repr__(self):
        return f'TensorValue({self.dtype}{list(self.shape)}, {self.array.tolist()!r})'


def dtype_of(array):
    """
    Map a numpy dtype to one of DTYPE, or raise DTypeMismatch
    """
    array = np.asarray(array)
    if array.dtype == np.bool_:
        return DTYPE.BOOL
    if np.issubdtype(array.dtype, np.integer):
        return DTYPE.I64
    if np.issubdtype(array.dtype, np.floating):
        return DTYPE.F64
    raise DTypeMismatch(f'unsupported numpy dtype {array.dtype}')


def tensor(value, dtype=None):
    """
    Build a TensorValue from anything numpy accepts; the buffer is copied.
    """
    array = np.array(value)
    if dtype is None:
        dtype = dtype_of(array)
    return TensorValue(dtype, np.array(array, dtype=NUMPY_DTYPES[dtype]))


def scalar(value, dtype=None):
    return tensor(value, dtype)


def zeros(shape, dtype=DTYPE.F64):
    return TensorValue(dtype, np.zeros(tuple(shape), dtype=NUMPY_DTYPES[dtype]))


def _require(condition, error, message):
    if not condition:
        raise error(message)


def _require_numeric(*values):
    for value in values:
        if value.dtype not in NUMERIC_DTYPES:
            raise DTypeMismatch(f'expected a numeric tensor, got {value.dtype}')


def _require_same_dtype(values):
    dtypes = {v.dtype for v in values}
    if len(dtypes) > 1:
        raise DTypeMismatch(f'dtype mismatch: {sorted(dtypes)}')


def normalize_axis(axis, rank):
    """Map a possibly negative axis into [0, rank)."""
    if not -rank <= axis < rank:
        raise AxisOutOfRange(f'axis {axis} out of range for rank {rank}')
    return axis + rank if axis < 0 else axis


def resolve_shape(shape, size):
    """
    Resolve at most one -1 in a reshape target against an element count.
    A -1 against an empty tensor resolves to 0.
    """
    shape = [int(d) for d in shape]
    unknown = [k for k, d in enumerate(shape) if d == -1]
    if len(unknown) > 1 or any(d < -1 for d in shape):
        raise IncompatibleShapes(f'invalid reshape target {shape}')
    known = math.prod(d for d in shape if d != -1)
    if unknown:
        if known == 0:
            shape[unknown[0]] = 0
        elif size % known:
            raise IncompatibleShapes(f'cannot reshape {size} elements into {shape}')
        else:
            shape[unknown[0]] = size // known
    if math.prod(shape) != size:
        raise IncompatibleShapes(f'cannot reshape {size} elements into {shape}')
    return tuple(shape)


# Elementwise

BINARY_OPS = {
    'add': np.add,
    'sub': np.subtract,
    'mul': np.multiply,
    'div': np.true_divide,
    'max': np.maximum,
    'min': np.minimum,
    'less': np.less,
    'equal': np.equal,
}
COMPARISON_OPS = ('less', 'equal')

UNARY_OPS = {
    'neg': np.negative,
    'exp': np.exp,
    'log': np.log,
    'relu': lambda v: np.maximum(v, 0),
    'tanh': np.tanh,
    'sigmoid': lambda v: 0.5 * (1.0 + np.tanh(0.5 * v)),
    'square': np.square,
    'logical_not': np.logical_not,
}
TRANSCENDENTAL_OPS = ('exp', 'log', 'tanh', 'sigmoid')


def broadcast_shapes(a, b):
    """
    Left-extend both shapes with 1s and take the elementwise max; dims must agree or be 1.
    """
    try:
        return tuple(int(d) for d in np.broadcast_shapes(tuple(a), tuple(b)))
    except ValueError:
        raise IncompatibleShapes(f'cannot broadcast {list(a)} with {list(b)}')


def binary_result_dtype(op, a_dtype, b_dtype):
    if a_dtype != b_dtype:
        raise DTypeMismatch(f'{op}: dtype mismatch {a_dtype} vs {b_dtype}')
    if op == 'equal':
        return DTYPE.BOOL
    if a_dtype not in NUMERIC_DTYPES:
        raise DTypeMismatch(f'{op}: expected numeric operands, got {a_dtype}')
    return DTYPE.BOOL if op in COMPARISON_OPS else a_dtype


def unary_result_dtype(op, x_dtype):
    if op == 'logical_not':
        _require(x_dtype == DTYPE.BOOL, DTypeMismatch, f'logical_not expects BOOL, got {x_dtype}')
    elif op in TRANSCENDENTAL_OPS:
        _require(x_dtype == DTYPE.F64, DTypeMismatch, f'{op} expects F64, got {x_dtype}')
    else:
        _require(x_dtype in NUMERIC_DTYPES, DTypeMismatch, f'{op} expects a numeric tensor, got {x_dtype}')
    return x_dtype


def binary_elementwise(op, a, b):
    dtype = binary_result_dtype(op, a.dtype, b.dtype)
    broadcast_shapes(a.shape, b.shape)
    fn = BINARY_OPS[op]
    if op == 'div' and a.dtype == DTYPE.I64:
        fn = np.floor_divide
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        return TensorValue(dtype, fn(a.array, b.array))


def unary_elementwise(op, x):
    dtype = unary_result_dtype(op, x.dtype)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        return TensorValue(dtype, UNARY_OPS[op](x.array))


def cast(x, dtype):
    return TensorValue(dtype, x.array.astype(NUMPY_DTYPES[dtype]))


# Linear algebra

def matmul(a, b):
    """
    [x,y]·[y,z] -> [x,z]; batch mode [n,x,y]·[n,y,z] -> [n,x,z].
    """
    _require_same_dtype((a, b))
    _require_numeric(a, b)
    if a.rank == 2 and b.rank == 2:
        _require(a.shape[1] == b.shape[0], IncompatibleShapes,
                 f'matmul inner dims differ: {list(a.shape)} x {list(b.shape)}')
    elif a.rank == 3 and b.rank == 3:
        _require(a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1], IncompatibleShapes,
                 f'batch matmul shapes differ: {list(a.shape)} x {list(b.shape)}')
    else:
        raise RankError(f'matmul expects rank 2 x 2 or 3 x 3, got {a.rank} x {b.rank}')
    return TensorValue(a.dtype, np.matmul(a.array, b.array))


def same_padding(k):
    before = (k - 1) // 2
    return before, k - 1 - before


def _correlate(xpad, f):
    # xpad [b, h+k1-1, w+k2-1, c], f [k1, k2, c, o] -> [b, h, w, o]
    windows = sliding_window_view(xpad, f.shape[:2], axis=(1, 2))
    return np.tensordot(windows, f, axes=([3, 4, 5], [2, 0, 1]))


def _pad_spatial(array, k1, k2, flipped=False):
    pads = []
    for k in (k1, k2):
        before, after = same_padding(k)
        pads.append((after, before) if flipped else (before, after))
    width = [(0, 0)] * (array.ndim - 3) + pads + [(0, 0)]
    return np.pad(array, width)


def conv2d(x, f):
    """
    NHWC convolution, stride 1, SAME zero padding (floor before, remainder after).
    """
    _require_same_dtype((x, f))
    _require_numeric(x, f)
    _require(x.rank == 4 and f.rank == 4, RankError,
             f'conv2d expects rank-4 input and filter, got {x.rank} and {f.rank}')
    _require(x.shape[3] == f.shape[2], IncompatibleShapes,
             f'conv2d channel mismatch: input {x.shape[3]} vs filter {f.shape[2]}')
    b, h, w, _ = x.shape
    k1, k2, _, c2 = f.shape
    if x.size == 0 or f.size == 0:
        return TensorValue(x.dtype, np.zeros((b, h, w, c2), dtype=NUMPY_DTYPES[x.dtype]))
    return TensorValue(x.dtype, _correlate(_pad_spatial(x.array, k1, k2), f.array))


def conv2d_backprop_input(g, f):
    """Gradient of conv2d with respect to its input, given the output cotangent."""
    _require_same_dtype((g, f))
    _require(g.rank == 4 and f.rank == 4, RankError,
             f'conv2d_backprop_input expects rank-4 operands, got {g.rank} and {f.rank}')
    _require(g.shape[3] == f.shape[3], IncompatibleShapes,
             f'conv2d_backprop_input channel mismatch: {g.shape[3]} vs {f.shape[3]}')
    b, h, w, _ = g.shape
    k1, k2, c1, _ = f.shape
    if g.size == 0 or f.size == 0:
        return TensorValue(g.dtype, np.zeros((b, h, w, c1), dtype=NUMPY_DTYPES[g.dtype]))
    rotated = f.array[::-1, ::-1].transpose(0, 1, 3, 2)
    return TensorValue(g.dtype, _correlate(_pad_spatial(g.array, k1, k2, flipped=True), rotated))


def conv2d_backprop_filter(x, g, filter_shape):
    """
    Gradient of conv2d with respect to its filter. Rank-5 operands are a leading batch
    of independent problems and yield one filter gradient per problem.
    """
    _require_same_dtype((x, g))
    k1, k2 = (int(k) for k in filter_shape)
    _require(x.rank == g.rank and x.rank in (4, 5), RankError,
             f'conv2d_backprop_filter expects rank-4 or rank-5 operands, got {x.rank} and {g.rank}')
    _require(x.shape[:-1] == g.shape[:-1], IncompatibleShapes,
             f'conv2d_backprop_filter shape mismatch: {list(x.shape)} vs {list(g.shape)}')
    lead = x.shape[:-4]
    h, w, c1 = x.shape[-3:]
    c2 = g.shape[-1]
    if x.size == 0 or g.size == 0:
        return TensorValue(x.dtype, np.zeros(lead + (k1, k2, c1, c2), dtype=NUMPY_DTYPES[x.dtype]))
    xpad = _pad_spatial(x.array, k1, k2)
    axes = (x.rank - 3, x.rank - 2)
    windows = sliding_window_view(xpad, (h, w), axis=axes)
    if x.rank == 4:
        out = np.tensordot(windows, g.array, axes=([0, 4, 5], [0, 1, 2]))
    else:
        out = np.einsum('nbpqcij,nbijo->npqco', windows, g.array)
    return TensorValue(x.dtype, out)


# Reductions and joins

def normalize_axes(axes, rank):
    normalized = [normalize_axis(int(a), rank) for a in axes]
    if len(set(normalized)) != len(normalized):
        raise DuplicateAxis(f'duplicate axes {list(axes)} for rank {rank}')
    return tuple(normalized)


def reduce_sum(x, axes):
    _require_numeric(x)
    normalized = normalize_axes(axes, x.rank)
    return TensorValue(x.dtype, np.asarray(np.sum(x.array, axis=normalized)))


def concat(xs, axis):
    _require(len(xs) > 0, IncompatibleShapes, 'concat needs at least one input')
    _require_same_dtype(xs)
    rank = xs[0].rank
    _require(all(x.rank == rank for x in xs), IncompatibleShapes,
             f'concat rank mismatch: {[list(x.shape) for x in xs]}')
    _require(rank > 0, RankError, 'concat of scalars')
    axis = normalize_axis(axis, rank)
    for x in xs[1:]:
        same = all(x.shape[d] == xs[0].shape[d] for d in range(rank) if d != axis)
        _require(same, IncompatibleShapes, f'concat shape mismatch: {[list(v.shape) for v in xs]}')
    return TensorValue(xs[0].dtype, np.concatenate([x.array for x in xs], axis=axis))


# Row gather / scatter

def _check_index_dtype(idx):
    _require(idx.dtype == DTYPE.I64, DTypeMismatch, f'index tensor must be I64, got {idx.dtype}')


def _check_bounds(indices, limit):
    bad = indices[(indices < 0) | (indices >= limit)]
    if bad.size:
        index = int(bad.ravel()[0])
        raise IndexOutOfBounds(f'index {index} out of bounds for leading dim {limit}', index=index)


def gather_rows(x, idx, batch_dims=0):
    """
    Rank-0 idx picks one row; rank-1 idx stacks the picked rows. With batch_dims=1
    row b of the result gathers from x[b] using idx[b].
    """
    _check_index_dtype(idx)
    if batch_dims == 0:
        _require(x.rank >= 1, RankError, 'gather_rows from a scalar')
        _require(idx.rank <= 1, RankError, f'gather_rows index must be rank 0 or 1, got {idx.rank}')
        _check_bounds(idx.array, x.shape[0])
        return TensorValue(x.dtype, np.take(x.array, idx.array, axis=0))
    _require(batch_dims == 1, RankError, f'unsupported batch_dims {batch_dims}')
    _require(x.rank >= 2 and idx.rank in (1, 2), RankError,
             f'batched gather_rows expects rank>=2 input and rank 1/2 index, got {x.rank} and {idx.rank}')
    _require(idx.shape[0] == x.shape[0], IncompatibleShapes,
             f'batched gather_rows leading dims differ: {x.shape[0]} vs {idx.shape[0]}')
    _check_bounds(idx.array, x.shape[1])
    rows = np.arange(x.shape[0]).reshape((x.shape[0],) + (1,) * (idx.rank - 1))
    return TensorValue(x.dtype, x.array[rows, idx.array])


def scatter_rows(index_sets, parts, total):
    """
    Stitch parts back together: row index_sets[k][j] of the result is row j of parts[k].
    Index sets must be disjoint and cover [0, total).
    """
    _require(len(index_sets) == len(parts) and parts, IncompatibleShapes,
             'scatter_rows needs one part per index set')
    _require_same_dtype(parts)
    trailing = parts[0].shape[1:]
    for idx, part in zip(index_sets, parts):
        _check_index_dtype(idx)
        _require(idx.rank == 1, RankError, 'scatter_rows index sets must be rank 1')
        _require(part.rank >= 1 and part.shape[0] == idx.shape[0] and part.shape[1:] == trailing,
                 IncompatibleShapes, f'scatter_rows part {list(part.shape)} does not match {idx.shape[0]} rows')
    flat = np.concatenate([idx.array for idx in index_sets])
    _check_bounds(flat, total)
    counts = np.bincount(flat, minlength=total)
    if (counts > 1).any():
        raise IndexCollision(f'row {int(np.argmax(counts > 1))} written by more than one index set')
    if (counts == 0).any():
        raise IncompleteCover(f'row {int(np.argmin(counts))} not covered by any index set')
    out = np.empty((int(total),) + trailing, dtype=NUMPY_DTYPES[parts[0].dtype])
    for idx, part in zip(index_sets, parts):
        out[idx.array] = part.array
    return TensorValue(parts[0].dtype, out)


def scatter_add_rows(idx, updates, total, batch_dims=0):
    """
    Additive scatter into zeros: duplicate indices accumulate.
    """
    _check_index_dtype(idx)
    _require_numeric(updates)
    if batch_dims == 0:
        _require(idx.rank <= 1, RankError, f'scatter_add_rows index must be rank 0 or 1, got {idx.rank}')
        trailing = updates.shape[idx.rank:]
        _require(updates.shape[:idx.rank] == idx.shape, IncompatibleShapes,
                 f'scatter_add_rows updates {list(updates.shape)} do not match index {list(idx.shape)}')
        _check_bounds(idx.array, total)
        out = np.zeros((int(total),) + trailing, dtype=NUMPY_DTYPES[updates.dtype])
        np.add.at(out, idx.array, updates.array)
        return TensorValue(updates.dtype, out)
    _require(batch_dims == 1 and idx.rank in (1, 2), RankError,
             f'batched scatter_add_rows expects rank 1/2 index, got {idx.rank}')
    _require(updates.shape[:idx.rank] == idx.shape, IncompatibleShapes,
             f'scatter_add_rows updates {list(updates.shape)} do not match index {list(idx.shape)}')
    _check_bounds(idx.array, total)
    n = idx.shape[0]
    trailing = updates.shape[idx.rank:]
    out = np.zeros((n, int(total)) + trailing, dtype=NUMPY_DTYPES[updates.dtype])
    rows = np.arange(n).reshape((n,) + (1,) * (idx.rank - 1))
    np.add.at(out, (rows, idx.array), updates.array)
    return TensorValue(updates.dtype, out)


def update_rows(acc, idx, rows):
    """
    Copy of acc with rows idx replaced by rows.
    """
    _check_index_dtype(idx)
    _require_same_dtype((acc, rows))
    _require(acc.rank >= 1 and idx.rank <= 1, RankError, 'update_rows expects rank>=1 target and rank 0/1 index')
    _require(rows.shape == idx.shape + acc.shape[1:], IncompatibleShapes,
             f'update_rows rows {list(rows.shape)} do not match index {list(idx.shape)} into {list(acc.shape)}')
    _check_bounds(idx.array, acc.shape[0])
    out = np.array(acc.array)
    out[idx.array] = rows.array
    return TensorValue(acc.dtype, out)


# Restructuring

def reshape(x, shape):
    return TensorValue(x.dtype, x.array.reshape(resolve_shape(shape, x.size)))


def transpose(x, perm):
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(x.rank)):
        raise BadPermutation(f'{perm} is not a permutation of {x.rank} axes')
    return TensorValue(x.dtype, np.transpose(x.array, perm))


def stack(xs, axis=0):
    _require(len(xs) > 0, IncompatibleShapes, 'stack needs at least one input')
    _require_same_dtype(xs)
    _require(all(x.shape == xs[0].shape for x in xs), IncompatibleShapes,
             f'stack shape mismatch: {[list(x.shape) for x in xs]}')
    axis = normalize_axis(axis, xs[0].rank + 1)
    return TensorValue(xs[0].dtype, np.stack([x.array for x in xs], axis=axis))


def slice_axis(x, axis, start, size):
    _require(x.rank > 0, RankError, 'slice of a scalar')
    axis = normalize_axis(axis, x.rank)
    _require(0 <= start and 0 <= size and start + size <= x.shape[axis], IncompatibleShapes,
             f'slice [{start}, {start + size}) out of range for dim {x.shape[axis]}')
    index = [slice(None)] * x.rank
    index[axis] = slice(start, start + size)
    return TensorValue(x.dtype, x.array[tuple(index)])


def slice_leading(x, n, axis=0):
    """Keep the first n rows along axis (X[0:n, ...])."""
    return slice_axis(x, axis, 0, n)


def restructure(op, *xs, **attrs):
    if op == 'reshape':
        return reshape(xs[0], attrs['shape'])
    if op == 'transpose':
        return transpose(xs[0], attrs['perm'])
    if op == 'stack':
        return stack(list(xs), attrs.get('axis', 0))
    if op == 'slice_leading':
        return slice_leading(xs[0], attrs['n'], attrs.get('axis', 0))
    raise ValueError(f'unknown restructure op {op!r}')


def tile_leading(x, count):
    """count copies of x along a new leading axis."""
    count = int(count)
    _require(count >= 0, IncompatibleShapes, f'negative tile count {count}')
    return TensorValue(x.dtype, np.broadcast_to(x.array, (count,) + x.shape))


def arange(count):
    return TensorValue(DTYPE.I64, np.arange(int(count), dtype=np.int64))


def dim_size(x, axis=0):
    return TensorValue(DTYPE.I64, np.int64(x.shape[normalize_axis(axis, x.rank)]))


def nonzero(c):
    _require(c.dtype == DTYPE.BOOL and c.rank == 1, DTypeMismatch, 'nonzero expects a BOOL vector')
    return TensorValue(DTYPE.I64, np.flatnonzero(c.array).astype(np.int64))
