#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Internal project dependencies
from . import tensor as T
from . import utils
from .exceptions import (
    AxisOutOfRange, BadPermutation, DTypeMismatch, DuplicateAxis, IncompatibleShapes, IncompleteCover,
    IndexCollision, IndexOutOfBounds, RankError,
)
from .tensor import DTYPE, tensor


def f64(value):
    return tensor(value, DTYPE.F64)


def i64(value):
    return tensor(value, DTYPE.I64)


class TestTensorValue(SimpleTestCase):
    def test_buffer_is_read_only(self):
        value = f64([1.0, 2.0])
        with self.assertRaises(ValueError):
            value.array[0] = 5.0

    def test_dtype_inferred_from_numpy(self):
        self.assertEqual(tensor([1, 2]).dtype, DTYPE.I64)
        self.assertEqual(tensor([1.0]).dtype, DTYPE.F64)
        self.assertEqual(tensor([True]).dtype, DTYPE.BOOL)
        self.assertEqual(f64(3.0).shape, ())

    def test_resolve_shape(self):
        self.assertEqual(T.resolve_shape([-1, 2], 6), (3, 2))
        self.assertEqual(T.resolve_shape([-1, 2], 0), (0, 2))
        self.assertEqual(T.resolve_shape([0, -1], 0), (0, 0))
        with self.assertRaises(IncompatibleShapes):
            T.resolve_shape([4, -1], 6)
        with self.assertRaises(IncompatibleShapes):
            T.resolve_shape([-1, -1], 6)


class TestElementwise(SimpleTestCase):
    def test_broadcast_shapes(self):
        self.assertEqual(T.broadcast_shapes((2, 3), (4, 1, 3)), (4, 2, 3))
        self.assertEqual(T.broadcast_shapes((), (4, 5)), (4, 5))
        self.assertEqual(T.broadcast_shapes((3, 1), (1, 4)), (3, 4))
        with self.assertRaises(IncompatibleShapes):
            T.broadcast_shapes((2,), (3,))

    def test_binary(self):
        assert_array_equal(T.binary_elementwise('add', f64([1, 2]), f64([3, 4])).array, [4, 6])
        assert_array_equal(T.binary_elementwise('add', f64(5), f64([1, 2, 3])).array, [6, 7, 8])
        less = T.binary_elementwise('less', f64([1, 5]), f64([3, 3]))
        self.assertEqual(less.dtype, DTYPE.BOOL)
        assert_array_equal(less.array, [True, False])

    def test_binary_dtype_mismatch(self):
        with self.assertRaises(DTypeMismatch):
            T.binary_elementwise('add', f64([1.0]), i64([1]))

    def test_integer_division_floors(self):
        assert_array_equal(T.binary_elementwise('div', i64([7, -7]), i64([2, 2])).array, [3, -4])

    def test_unary(self):
        assert_array_equal(T.unary_elementwise('relu', f64([-1, 0, 2])).array, [0, 0, 2])
        self.assertEqual(T.unary_elementwise('sigmoid', f64(0.0)).item(), 0.5)
        x = f64([0.5, -2.0])
        twice = T.unary_elementwise('neg', T.unary_elementwise('neg', x))
        assert_array_equal(twice.array, x.array)

    def test_transcendental_needs_f64(self):
        with self.assertRaises(DTypeMismatch):
            T.unary_elementwise('exp', i64([1]))

    def test_cast(self):
        value = T.cast(i64([1, 0]), DTYPE.BOOL)
        self.assertEqual(value.dtype, DTYPE.BOOL)
        assert_array_equal(value.array, [True, False])


class TestLinearAlgebra(SimpleTestCase):
    def test_matmul(self):
        a = f64([[1, 2], [3, 4]])
        assert_array_equal(T.matmul(a, f64(np.eye(2))).array, a.array)
        assert_array_equal(T.matmul(a, f64([[5, 6], [7, 8]])).array, [[19, 22], [43, 50]])

    def test_batch_matmul(self):
        out = T.matmul(f64([[[2]], [[3]]]), f64([[[5]], [[7]]]))
        assert_array_equal(out.array, [[[10]], [[21]]])

    def test_matmul_errors(self):
        with self.assertRaises(IncompatibleShapes):
            T.matmul(f64(np.ones((2, 3))), f64(np.ones((4, 5))))
        with self.assertRaises(RankError):
            T.matmul(f64(np.ones(3)), f64(np.ones((3, 2))))

    def test_reshaped_matmul_matches_batch_matmul(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n, x, y, z = rng.integers(1, 5, size=4)
            stacked = f64(rng.normal(size=(n, x, y)))
            rhs = f64(rng.normal(size=(y, z)))
            folded = T.matmul(T.reshape(stacked, [n * x, y]), rhs)
            expected = T.matmul(stacked, T.tile_leading(rhs, n))
            assert_allclose(T.reshape(folded, [n, x, z]).array, expected.array, atol=1e-12)

    def test_conv2d_identity_filter(self):
        x = f64(np.random.default_rng(0).normal(size=(2, 4, 5, 3)))
        identity = f64(np.eye(3).reshape(1, 1, 3, 3))
        assert_allclose(T.conv2d(x, identity).array, x.array)

    def test_conv2d_same_padding(self):
        out = T.conv2d(f64(np.ones((1, 5, 5, 1))), f64(np.ones((3, 3, 1, 1))))
        self.assertEqual(out.shape, (1, 5, 5, 1))
        self.assertEqual(out.array[0, 2, 2, 0], 9.0)
        self.assertEqual(out.array[0, 0, 0, 0], 4.0)
        self.assertEqual(out.array[0, 0, 2, 0], 6.0)

    def test_conv2d_zero_input(self):
        out = T.conv2d(f64(np.zeros((1, 3, 3, 2))), f64(np.ones((3, 3, 2, 4))))
        assert_array_equal(out.array, np.zeros((1, 3, 3, 4)))

    def test_conv2d_backprops_are_adjoints(self):
        rng = np.random.default_rng(1)
        for k1, k2 in ((3, 3), (2, 3)):
            x = f64(rng.normal(size=(2, 5, 4, 3)))
            f = f64(rng.normal(size=(k1, k2, 3, 2)))
            g = f64(rng.normal(size=(2, 5, 4, 2)))
            forward = float(np.sum(T.conv2d(x, f).array * g.array))
            via_input = float(np.sum(x.array * T.conv2d_backprop_input(g, f).array))
            via_filter = float(np.sum(f.array * T.conv2d_backprop_filter(x, g, (k1, k2)).array))
            self.assertAlmostEqual(forward, via_input, places=9)
            self.assertAlmostEqual(forward, via_filter, places=9)

    def test_batched_filter_gradient(self):
        rng = np.random.default_rng(2)
        x = f64(rng.normal(size=(3, 1, 4, 4, 2)))
        g = f64(rng.normal(size=(3, 1, 4, 4, 5)))
        batched = T.conv2d_backprop_filter(x, g, (3, 3))
        self.assertEqual(batched.shape, (3, 3, 3, 2, 5))
        for n in range(3):
            single = T.conv2d_backprop_filter(f64(x.array[n]), f64(g.array[n]), (3, 3))
            assert_allclose(batched.array[n], single.array, atol=1e-12)


class TestReductionsAndRows(SimpleTestCase):
    def test_reduce_sum(self):
        x = f64([[1, 2], [3, 4]])
        assert_array_equal(T.reduce_sum(x, [0]).array, [4, 6])
        assert_array_equal(T.reduce_sum(x, [-1]).array, [3, 7])
        self.assertEqual(T.reduce_sum(f64(5.0), []).item(), 5.0)
        with self.assertRaises(DuplicateAxis):
            T.reduce_sum(x, [1, -1])
        with self.assertRaises(AxisOutOfRange):
            T.reduce_sum(x, [2])

    def test_concat(self):
        out = T.concat([f64([1]), f64([2]), f64([3])], 0)
        assert_array_equal(out.array, [1, 2, 3])
        parts = [f64(np.zeros((2, 1, 4))), f64(np.zeros((2, 3, 4)))]
        self.assertEqual(T.concat(parts, 1).shape, (2, 4, 4))
        with self.assertRaises(RankError):
            T.concat([f64(1.0)], 0)

    def test_gather_rows(self):
        x = f64([[1, 2], [3, 4]])
        assert_array_equal(T.gather_rows(x, i64(1)).array, [3, 4])
        assert_array_equal(T.gather_rows(x, i64([1, 1, 0])).array, [[3, 4], [3, 4], [1, 2]])
        assert_array_equal(T.gather_rows(x, i64([0, 1])).array, x.array)

    def test_gather_rows_out_of_bounds(self):
        with self.assertRaises(IndexOutOfBounds) as context:
            T.gather_rows(f64([[1, 2]]), i64([0, 3]))
        self.assertEqual(context.exception.index, 3)

    def test_gather_rows_batched(self):
        x = f64([[10, 11, 12], [20, 21, 22]])
        assert_array_equal(T.gather_rows(x, i64([2, 0]), batch_dims=1).array, [12, 20])

    def test_scatter_rows(self):
        out = T.scatter_rows([i64([0, 2]), i64([1, 3])], [f64([[1], [3]]), f64([[2], [4]])], 4)
        assert_array_equal(out.array, [[1], [2], [3], [4]])
        one_sided = T.scatter_rows([i64([0, 1, 2]), i64(np.zeros(0, dtype=int))],
                                   [f64([5, 6, 7]), f64(np.zeros(0))], 3)
        assert_array_equal(one_sided.array, [5, 6, 7])

    def test_scatter_rows_errors(self):
        with self.assertRaises(IndexCollision):
            T.scatter_rows([i64([0, 1]), i64([1])], [f64([1, 2]), f64([3])], 2)
        with self.assertRaises(IncompleteCover):
            T.scatter_rows([i64([0])], [f64([1])], 2)

    def test_scatter_add_rows_accumulates(self):
        out = T.scatter_add_rows(i64([1, 1]), f64([[1.0], [2.0]]), 3)
        assert_array_equal(out.array, [[0.0], [3.0], [0.0]])

    def test_update_rows(self):
        out = T.update_rows(f64([1, 2, 3]), i64([2, 0]), f64([30, 10]))
        assert_array_equal(out.array, [10, 2, 30])


class TestRestructure(SimpleTestCase):
    def test_restructure(self):
        x = f64([[1, 2], [3, 4]])
        assert_array_equal(T.restructure('transpose', x, perm=[0, 1]).array, x.array)
        assert_array_equal(T.restructure('stack', f64([1, 2]), f64([3, 4]), axis=0).array, [[1, 2], [3, 4]])
        self.assertEqual(T.restructure('reshape', x, shape=[-1]).shape, (4,))
        assert_array_equal(T.restructure('slice_leading', x, n=1).array, [[1, 2]])

    def test_bad_permutation(self):
        with self.assertRaises(BadPermutation):
            T.transpose(f64(np.ones((2, 3))), [0, 0])

    def test_tile_and_nonzero(self):
        assert_array_equal(T.tile_leading(f64(3.0), 4).array, [3, 3, 3, 3])
        self.assertEqual(T.tile_leading(f64([1, 2]), 0).shape, (0, 2))
        assert_array_equal(T.nonzero(tensor([False, True, True])).array, [1, 2])
        self.assertEqual(T.dim_size(f64(np.ones((5, 2))), 1).item(), 2)


class TestUtils(SimpleTestCase):
    def test_max_abs_diff(self):
        self.assertEqual(utils.max_abs_diff(f64([1, 2]), f64([1, 2.5])), 0.5)
        self.assertEqual(utils.max_abs_diff(f64([1]), f64([1, 2])), float('inf'))
        self.assertEqual(utils.max_abs_diff(f64([np.nan]), f64([np.nan])), 0.0)
        self.assertEqual(utils.max_abs_diff(f64([np.nan]), f64([1.0])), float('inf'))

    def test_max_abs_diff_of_scalars(self):
        self.assertEqual(utils.max_abs_diff(f64(1.0), f64(1.0)), 0.0)
        self.assertEqual(utils.max_abs_diff(f64(1.0), f64(3.0)), 2.0)
        self.assertEqual(utils.max_abs_diff(f64(np.inf), f64(np.inf)), 0.0)
        self.assertEqual(utils.compare_stores({'acc': f64(2.0)}, {'acc': f64(2.0)}), [])

    def test_compare_outputs(self):
        problems = utils.compare_outputs([f64([1.0]), i64([2])], [f64([1.0 + 1e-12]), f64([2.0])], 1e-9)
        self.assertEqual(len(problems), 1)
        self.assertEqual(problems[0][0], 1)

    def test_parse_helpers(self):
        self.assertEqual(utils.parse_int_list('1,16, 256'), [1, 16, 256])
        self.assertEqual(utils.parse_weights('elementwise=0.6,control=0.4'), {'elementwise': 0.6, 'control': 0.4})
