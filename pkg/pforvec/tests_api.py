#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Internal project dependencies
from . import workloads
from .api import jacobian, map_fn, per_example_gradients, pfor
from .autodiff import gradient
from .exceptions import ShapeMismatch
from .graph import Graph
from .interpreter import Interpreter, VariableStore
from .tensor import DTYPE, tensor
from .tests_graph import cond_example
from .vectorizer import vectorize


def evaluate(g, refs, feeds=None):
    return Interpreter(VariableStore.from_graph(g)).run(g, feeds=feeds, fetches=list(refs))


class TestPfor(SimpleTestCase):
    def add_sub(self, n, **options):
        rng = np.random.default_rng(0)
        a_value, b_value = rng.normal(size=(10, 20)), rng.normal(size=(10, 20))
        g = Graph()
        a, b = g.constant(a_value), g.constant(b_value)

        def body(sub, i):
            a_i, b_i = sub.op('gather_rows', a, i), sub.op('gather_rows', b, i)
            return [sub.op('add', a_i, b_i), sub.op('sub', a_i, b_i)]

        refs = pfor(g, body, n, **options)
        return g, refs, a_value, b_value

    def test_add_sub(self):
        g, refs, a_value, b_value = self.add_sub(10)
        self.assertEqual([g.spec(r).shape for r in refs], [(10, 20), (10, 20)])
        total, diff = evaluate(g, refs)
        assert_array_equal(total.array, a_value + b_value)
        assert_array_equal(diff.array, a_value - b_value)

    def test_zero_iterations(self):
        g, refs, _, _ = self.add_sub(0)
        self.assertEqual([v.shape for v in evaluate(g, refs)], [(0, 20), (0, 20)])

    def test_single_output_is_a_ref(self):
        g = Graph()
        x = g.constant(np.ones((3, 2)))
        out = pfor(g, lambda sub, i: sub.op('gather_rows', x, i), 3, vectorize=False)
        self.assertEqual(g.spec(out).shape, (3, 2))

    def test_dynamic_iteration_count(self):
        g = Graph()
        n = g.op('dim_size', g.placeholder('x', (None, 3)))
        out = pfor(g, lambda sub, i: sub.op('mul', sub.op('cast', i, dtype=DTYPE.F64), sub.constant(2.0)), n)
        (value,) = evaluate(g, [out], feeds={'x': np.zeros((4, 3))})
        assert_array_equal(value.array, [0, 2, 4, 6])

    def test_cond_body_matches_oracle(self):
        oracle = Graph()
        expected = evaluate(oracle, [cond_example(oracle, 7)])[0]
        g = Graph()
        cond_ref = cond_example(g, 7)
        (actual,) = evaluate(g, vectorize(g, cond_ref.node))
        assert_array_equal(actual.array, expected.array)


class TestJacobian(SimpleTestCase):
    def test_elementwise_square(self):
        g = Graph()
        x = g.constant([1.0, 2.0, 3.0])
        out = jacobian(g, g.op('mul', x, x), x)
        (value,) = evaluate(g, [out])
        assert_allclose(value.array, np.diag([2.0, 4.0, 6.0]), atol=1e-12)

    def test_linear_map(self):
        w = np.random.default_rng(1).normal(size=(3, 4))
        g = Graph()
        x = g.constant(np.random.default_rng(2).normal(size=4))
        y = g.op('reshape', g.op('matmul', g.constant(w), g.op('reshape', x, shape=[4, 1])), shape=[3])
        (value,) = evaluate(g, [jacobian(g, y, x)])
        assert_allclose(value.array, w, atol=1e-12)

    def test_mlp_against_finite_differences(self):
        point = np.random.default_rng(3).uniform(-1.0, 1.0, size=8)

        def forward(x_value):
            g = Graph()
            params = workloads.mlp_params(g, np.random.default_rng(0), 10)
            out = workloads.mlp_forward(g, g.constant(tensor(x_value, DTYPE.F64)), params)
            return g, out

        g = Graph()
        params = workloads.mlp_params(g, np.random.default_rng(0), 10)
        x = g.constant(tensor(point, DTYPE.F64))
        jac = jacobian(g, workloads.mlp_forward(g, x, params), x)
        (value,) = evaluate(g, [jac])
        self.assertEqual(value.shape, (10, 8))

        step = 1e-6
        for k in range(8):
            up, down = point.copy(), point.copy()
            up[k] += step
            down[k] -= step
            g_up, out_up = forward(up)
            g_down, out_down = forward(down)
            column = (evaluate(g_up, [out_up])[0].array - evaluate(g_down, [out_down])[0].array) / (2 * step)
            assert_allclose(value.array[:, k], column, rtol=1e-4, atol=1e-7)

    def test_fallback_loop_gives_same_jacobian(self):
        def build(mode):
            g = Graph()
            params = workloads.mlp_params(g, np.random.default_rng(0), 4)
            x = g.constant(tensor(np.linspace(-1.0, 1.0, 8), DTYPE.F64))
            jac = jacobian(g, workloads.mlp_forward(g, x, params), x, **workloads.pfor_options(mode))
            return evaluate(g, [jac])[0]

        fast = build(workloads.MODES.vectorized)
        assert_allclose(build(workloads.MODES.fallback_loop).array, fast.array, atol=1e-12)
        assert_allclose(build(workloads.MODES.oracle).array, fast.array, atol=1e-12)

    def test_hessian_is_symmetric(self):
        rng = np.random.default_rng(4)
        w, point = rng.normal(size=(3, 4)), rng.normal(size=4)
        g = Graph()
        x = g.constant(tensor(point, DTYPE.F64))
        z = g.op('matmul', g.constant(tensor(w, DTYPE.F64)), g.op('reshape', x, shape=[4, 1]))
        energy = g.op('reduce_sum', g.op('tanh', z), axes=[0, 1])
        grad = jacobian(g, energy, x)
        hessian = jacobian(g, grad, x)
        self.assertEqual(g.spec(hessian).shape, (4, 4))
        (value,) = evaluate(g, [hessian])
        assert_allclose(value.array, value.array.T, atol=1e-12)
        t = np.tanh(w @ point)
        assert_allclose(value.array, w.T @ np.diag(-2.0 * t * (1.0 - t ** 2)) @ w, atol=1e-10)

    def test_needs_static_shapes(self):
        g = Graph()
        x = g.placeholder('x', (None,))
        with self.assertRaises(ShapeMismatch):
            jacobian(g, g.op('square', x), x)


class TestPerExampleGradients(SimpleTestCase):
    def test_batch_of_one_matches_plain_gradient(self):
        g = Graph()
        w = g.constant([0.5, -1.0, 2.0])
        xs = g.constant([[1.0, 2.0, 3.0]])

        def loss(sub, i):
            return sub.op('reduce_sum', sub.op('square', sub.op('mul', w, sub.op('gather_rows', xs, i))), axes=[0])

        rows = per_example_gradients(g, loss, 1, w)
        plain = gradient(g, g.op('reduce_sum', g.op('square', g.op('mul', w, xs)), axes=[0, 1]), w)
        per_row, expected = evaluate(g, [rows, plain])
        self.assertEqual(per_row.shape, (1, 3))
        assert_allclose(per_row.array[0], expected.array, atol=1e-12)

    def test_rows_sum_to_batch_gradient(self):
        rng = np.random.default_rng(4)
        g = Graph()
        w = g.constant(rng.normal(size=3))
        xs = g.constant(rng.normal(size=(5, 3)))

        def loss(sub, i):
            return sub.op('tanh', sub.op('reduce_sum', sub.op('mul', w, sub.op('gather_rows', xs, i)), axes=[0]))

        rows = per_example_gradients(g, loss, 5, w)
        batch_loss = g.op('reduce_sum', g.op('tanh', g.op('reduce_sum', g.op('mul', xs, w), axes=[1])), axes=[0])
        per_row, expected = evaluate(g, [rows, gradient(g, batch_loss, w)])
        self.assertEqual(per_row.shape, (5, 3))
        assert_allclose(per_row.array.sum(axis=0), expected.array, atol=1e-9)

    def test_conv_model_matches_independent_runs(self):
        batch = 2
        rng = np.random.default_rng(5)
        g = Graph()
        params = workloads.mnist_params(g, rng)
        images = g.constant(tensor(rng.uniform(-1.0, 1.0, size=(batch,) + workloads.IMAGE), DTYPE.F64))
        onehots = g.constant(tensor(np.eye(workloads.CLASSES)[[3, 7]], DTYPE.F64))
        wrt = [params['filter'], params['dense'], params['bias']]

        def loss_fn(sub, i):
            return workloads.mnist_loss(sub, sub.op('gather_rows', images, i), sub.op('gather_rows', onehots, i),
                                        params)

        stacked = per_example_gradients(g, loss_fn, batch, wrt)
        singles = []
        for b in range(batch):
            index = g.constant(b)
            loss = workloads.mnist_loss(g, g.op('gather_rows', images, index), g.op('gather_rows', onehots, index),
                                        params)
            singles.append(gradient(g, loss, wrt))
        values = evaluate(g, list(stacked) + [r for refs in singles for r in refs])
        per_example, independent = values[:3], values[3:]
        for b in range(batch):
            for k in range(3):
                assert_allclose(per_example[k].array[b], independent[3 * b + k].array, atol=1e-9)


class TestMapFn(SimpleTestCase):
    def test_identity(self):
        g = Graph()
        x = g.constant([[1.0, 2.0], [3.0, 4.0]])
        (value,) = evaluate(g, [map_fn(g, lambda sub, row: row, x)])
        assert_array_equal(value.array, [[1.0, 2.0], [3.0, 4.0]])

    def test_row_sum(self):
        g = Graph()
        x = g.constant([[1.0, 2.0], [3.0, 4.0]])
        out = map_fn(g, lambda sub, row: sub.op('reduce_sum', row, axes=[0]), x)
        assert_array_equal(evaluate(g, [out])[0].array, [3.0, 7.0])

    def test_normalize_rows_of_unknown_count(self):
        data = np.random.default_rng(6).normal(size=(5, 3))
        g = Graph()
        x = g.placeholder('x', (None, 3))

        def normalize(sub, row):
            norm = sub.op('add', sub.constant(1.0), sub.op('reduce_sum', sub.op('square', row), axes=[0]))
            return sub.op('div', row, norm)

        out = map_fn(g, normalize, x)
        (value,) = evaluate(g, [out], feeds={'x': data})
        expected = data / (1.0 + (data ** 2).sum(axis=1, keepdims=True))
        assert_allclose(value.array, expected, atol=1e-12)

    def test_linear_model_matches_the_batched_model(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(6, 16))
        g = Graph()
        params = workloads.linear_params(g, rng, dim=16)
        xs = g.constant(tensor(data, DTYPE.F64))
        mapped = map_fn(g, lambda sub, row: workloads.linear_forward(sub, row, params), xs)
        batched = g.op('matmul', xs, params['w'])
        mapped_value, batched_value = evaluate(g, [mapped, batched])
        self.assertEqual(mapped_value.shape, (6, 16))
        assert_allclose(mapped_value.array, batched_value.array, atol=1e-12)
