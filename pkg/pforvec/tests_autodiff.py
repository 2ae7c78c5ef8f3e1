#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Internal project dependencies
from .autodiff import VJP_RULES, gradient
from .exceptions import NonDifferentiableOp, NonScalarOutput
from .graph import Graph
from .interpreter import execute
from .tensor import DTYPE, tensor

STEP = 1e-6


def value_of(fn, values):
    g = Graph()
    refs = [g.constant(tensor(v, DTYPE.F64)) for v in values]
    g.set_outputs(fn(g, *refs))
    return execute(g)[0].item()


def finite_differences(fn, values, k):
    """Central differences of fn with respect to values[k]."""
    base = [np.array(v, dtype=np.float64) for v in values]
    grad = np.zeros_like(base[k])
    for index in np.ndindex(base[k].shape):
        up = [v.copy() for v in base]
        down = [v.copy() for v in base]
        up[k][index] += STEP
        down[k][index] -= STEP
        grad[index] = (value_of(fn, up) - value_of(fn, down)) / (2 * STEP)
    return grad


def symbolic(fn, values):
    g = Graph()
    refs = [g.constant(tensor(v, DTYPE.F64)) for v in values]
    grads = gradient(g, fn(g, *refs), refs)
    g.set_outputs(grads)
    return [v.array for v in execute(g)]


class GradientCheckMixin(object):
    def check(self, fn, *values):
        for k, grad in enumerate(symbolic(fn, values)):
            assert_allclose(grad, finite_differences(fn, values, k), rtol=1e-4, atol=1e-6)


def total(g, ref):
    rank = g.spec(ref).rank
    return g.op('reduce_sum', ref, axes=list(range(rank)))


class TestGradient(GradientCheckMixin, SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def normal(self, *shape):
        return self.rng.normal(size=shape)

    def test_square(self):
        g = Graph()
        x = g.constant([1.0, 2.0, 3.0])
        grad = gradient(g, total(g, g.op('square', x)), x)
        g.set_outputs(grad)
        assert_array_equal(execute(g)[0].array, [2.0, 4.0, 6.0])

    def test_matmul_against_vector(self):
        w = self.normal(3, 4)
        g = Graph()
        x = g.constant(self.normal(4, 1))
        out = total(g, g.op('matmul', g.constant(w), x))
        g.set_outputs(gradient(g, out, x))
        assert_allclose(execute(g)[0].array[:, 0], w.sum(axis=0), atol=1e-12)

    def test_no_path_gives_zeros(self):
        g = Graph()
        x = g.constant([1.0, 2.0])
        y = g.constant([[3.0]])
        g.set_outputs(gradient(g, total(g, g.op('square', x)), y))
        assert_array_equal(execute(g)[0].array, [[0.0]])

    def test_list_of_targets(self):
        g = Graph()
        a, b = g.constant(2.0), g.constant(5.0)
        grads = gradient(g, g.op('mul', a, b), [a, b])
        self.assertEqual(len(grads), 2)
        g.set_outputs(grads)
        self.assertEqual([v.item() for v in execute(g)], [5.0, 2.0])

    def test_output_must_be_scalar(self):
        g = Graph()
        x = g.constant([1.0, 2.0])
        with self.assertRaises(NonScalarOutput):
            gradient(g, x, x)

    def test_control_flow_is_not_differentiable(self):
        g = Graph()
        x = g.constant(1.0)
        (y,) = g.cond(g.constant(True), lambda s: s.op('neg', x), lambda s: x)
        with self.assertRaises(NonDifferentiableOp):
            gradient(g, y, x)

    def test_elementwise(self):
        def fn(g, a, b):
            mixed = g.op('add', g.op('mul', g.op('tanh', a), g.op('exp', b)), g.op('div', a, g.op('sigmoid', b)))
            mixed = g.op('sub', mixed, g.op('neg', g.op('square', a)))
            return total(g, g.op('log', g.op('add', g.op('square', mixed), g.constant(1.0))))

        self.check(fn, self.normal(2, 3), self.normal(2, 3))

    def test_relu_and_extrema(self):
        a = np.array([0.5, -1.5, 2.0, -0.3])
        b = np.array([1.0, -1.0, -0.7, 0.4])

        def fn(g, x, y):
            picked = g.op('add', g.op('max', x, y), g.op('min', x, g.op('mul', y, g.constant(2.0))))
            return total(g, g.op('mul', g.op('relu', x), picked))

        self.check(fn, a, b)

    def test_broadcasting(self):
        def fn(g, row, matrix, scale):
            shifted = g.op('add', matrix, row)
            return total(g, g.op('mul', g.op('tanh', shifted), scale))

        self.check(fn, self.normal(3), self.normal(2, 3), self.normal())

    def test_matmul(self):
        def fn(g, a, b):
            return total(g, g.op('tanh', g.op('matmul', a, b)))

        self.check(fn, self.normal(2, 3), self.normal(3, 4))

    def test_batch_matmul(self):
        def fn(g, a, b):
            return total(g, g.op('square', g.op('matmul', a, b)))

        self.check(fn, self.normal(2, 2, 3), self.normal(2, 3, 2))

    def test_conv2d(self):
        def fn(g, x, f):
            return total(g, g.op('tanh', g.op('conv2d', x, f)))

        self.check(fn, self.normal(1, 4, 4, 2), self.normal(3, 2, 2, 3))

    def test_reductions_and_joins(self):
        def fn(g, a, b):
            joined = g.op('concat', a, b, axis=1)
            part = g.op('slice', joined, axis=1, start=1, size=3)
            stacked = g.op('stack', part, g.op('square', part), axis=0)
            summed = g.op('reduce_sum', stacked, axes=[-1])
            return total(g, g.op('tanh', g.op('transpose', summed, perm=[1, 0])))

        self.check(fn, self.normal(2, 2), self.normal(2, 3))

    def test_reshape_and_leading_slice(self):
        def fn(g, x):
            flat = g.op('reshape', x, shape=[-1])
            head = g.op('slice_leading', g.op('reshape', flat, shape=[3, 2]), n=2)
            return total(g, g.op('square', head))

        self.check(fn, self.normal(2, 3))

    def test_gather_with_duplicates(self):
        def fn(g, x):
            rows = g.op('gather_rows', x, g.constant(tensor([1, 1, 0], DTYPE.I64)))
            return total(g, g.op('mul', rows, g.constant(np.arange(6.0).reshape(3, 2))))

        (grad,) = symbolic(fn, [np.zeros((3, 2))])
        # row 1 collects the cotangents of output rows 0 and 1
        assert_array_equal(grad, [[4.0, 5.0], [2.0, 4.0], [0.0, 0.0]])

    def test_gather_and_scatter(self):
        index = tensor([2, 0, 2], DTYPE.I64)

        def fn(g, x, updates):
            picked = g.op('gather_rows', x, g.constant(index))
            spread = g.op('scatter_add_rows', g.constant(index), g.op('mul', picked, updates), total=3)
            return total(g, g.op('square', spread))

        self.check(fn, self.normal(3, 2), self.normal(3, 2))

    def test_tile_leading(self):
        def fn(g, x):
            return total(g, g.op('square', g.op('tile_leading', x, g.constant(3))))

        self.check(fn, self.normal(2))

    def test_deep_chain(self):
        g = Graph()
        x = g.constant(0.5)
        y = x
        for _ in range(3000):
            y = g.op('add', y, x)
        g.set_outputs(gradient(g, y, x))
        self.assertEqual(execute(g)[0].item(), 3001.0)

    def test_gradient_inside_a_subgraph(self):
        g = Graph()
        x = g.constant([1.0, 2.0, 3.0])

        def body(sub, i):
            row = sub.op('gather_rows', x, i)
            return gradient(sub, sub.op('square', row), x)

        (out,) = g.parfor(3, body)
        g.set_outputs(out)
        assert_array_equal(execute(g)[0].array, np.diag([2.0, 4.0, 6.0]))

    def test_rules_cover_differentiable_kinds(self):
        for kind in ('add', 'matmul', 'conv2d', 'conv2d_backprop_input', 'conv2d_backprop_filter',
                     'reduce_sum', 'gather_rows', 'scatter_rows', 'update_rows', 'reshape', 'transpose'):
            self.assertIn(kind, VJP_RULES)
