#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
from mock import patch
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Internal project dependencies
from . import converters  # noqa: F401
from .api import pfor
from .exceptions import StatefulNotSupported, VectorizeError
from .graph import Graph
from .interpreter import Interpreter, VariableStore
from .ops import BLOCK_KINDS
from .serialization import serialize
from .tensor import DTYPE, tensor
from .tests_graph import cond_example, while_example
from .vectorizer import (
    DEFAULT_REGISTRY, PATHS, STATEFUL_POLICIES, ConversionContext, Diagnostics, VectorizePolicy, stacked, unstacked,
    vectorize,
)


def run(g, refs):
    interpreter = Interpreter(VariableStore.from_graph(g))
    values = interpreter.run(g, fetches=list(refs))
    return values, interpreter.dispatch_count


def evaluate(g, ref):
    return run(g, [ref])[0][0]


def kinds(g):
    return [n.kind for n in g.nodes.values()]


def both_ways(build, n, **options):
    """(oracle value, vectorized value) of build(g, n) for one pfor output."""
    results = []
    for vectorized in (False, True):
        g = Graph()
        ref = build(g, n, vectorize=vectorized, **options)
        results.append(evaluate(g, ref))
    return results


class TestStatelessConversion(SimpleTestCase):
    def test_gather_on_loop_var_is_the_input(self):
        g = Graph()
        x = g.constant(np.arange(12.0).reshape(4, 3))
        out = pfor(g, lambda sub, i: sub.op('gather_rows', x, i), 4)
        self.assertEqual(out, x)
        self.assertNotIn('gather_rows', kinds(g))
        self.assertNotIn('range', kinds(g))

    def test_gather_on_loop_var_with_fewer_iterations(self):
        g = Graph()
        x = g.constant(np.arange(12.0).reshape(4, 3))
        out = pfor(g, lambda sub, i: sub.op('gather_rows', x, i), 2)
        assert_array_equal(evaluate(g, out).array, [[0, 1, 2], [3, 4, 5]])

    def test_add_sub_example(self):
        rng = np.random.default_rng(0)
        a_value, b_value = rng.normal(size=(10, 20)), rng.normal(size=(10, 20))
        g = Graph()
        a, b = g.constant(a_value), g.constant(b_value)
        diagnostics = Diagnostics()

        def body(sub, i):
            a_i = sub.op('gather_rows', a, i)
            b_i = sub.op('gather_rows', b, i)
            return [sub.op('add', a_i, b_i), sub.op('sub', a_i, b_i)]

        total, diff = pfor(g, body, 10, diagnostics=diagnostics)
        (total_value, diff_value), _ = run(g, [total, diff])
        assert_array_equal(total_value.array, a_value + b_value)
        assert_array_equal(diff_value.array, a_value - b_value)
        self.assertEqual(diagnostics.fallbacks(), [])
        self.assertNotIn(BLOCK_KINDS.PARFOR, kinds(g))

    def test_invariant_body_is_tiled(self):
        g = Graph()
        out = pfor(g, lambda sub, i: sub.constant(7.0), 4)
        assert_array_equal(evaluate(g, out).array, [7, 7, 7, 7])
        self.assertIn('tile_leading', kinds(g))

    def test_stacked_matmul_with_invariant_rhs(self):
        rng = np.random.default_rng(1)
        xs = rng.normal(size=(5, 2, 3))
        w = rng.normal(size=(3, 4))
        g = Graph()
        x, wr = g.constant(xs), g.constant(w)
        out = pfor(g, lambda sub, i: sub.op('matmul', sub.op('gather_rows', x, i), wr), 5)
        self.assertEqual(g.spec(out).shape, (5, 2, 4))
        self.assertNotIn(BLOCK_KINDS.WHILE, kinds(g))
        assert_allclose(evaluate(g, out).array, xs @ w, atol=1e-12)

    def test_invariant_lhs_matmul(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(2, 3))
        ys = rng.normal(size=(5, 3, 4))
        g = Graph()
        ar, y = g.constant(a), g.constant(ys)
        out = pfor(g, lambda sub, i: sub.op('matmul', ar, sub.op('gather_rows', y, i)), 5)
        assert_allclose(evaluate(g, out).array, a @ ys, atol=1e-12)

    def test_both_stacked_matmul(self):
        rng = np.random.default_rng(3)
        xs, ys = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 3, 2))
        g = Graph()
        x, y = g.constant(xs), g.constant(ys)
        out = pfor(g, lambda sub, i: sub.op('matmul', sub.op('gather_rows', x, i), sub.op('gather_rows', y, i)), 4)
        assert_allclose(evaluate(g, out).array, xs @ ys, atol=1e-12)

    def test_broadcast_against_lower_rank_stacked_value(self):
        rng = np.random.default_rng(4)
        x_value = rng.normal(size=(2, 3))
        y_value = rng.normal(size=(5, 3))
        g = Graph()
        x, y = g.constant(x_value), g.constant(y_value)
        out = pfor(g, lambda sub, i: sub.op('add', x, sub.op('gather_rows', y, i)), 5)
        self.assertEqual(g.spec(out).shape, (5, 2, 3))
        assert_allclose(evaluate(g, out).array, x_value[None] + y_value[:, None], atol=1e-12)

    def test_reduce_sum_axes_are_shifted(self):
        g = Graph()
        x = g.constant(np.ones((3, 2, 3, 4)))
        out = pfor(g, lambda sub, i: sub.op('reduce_sum', sub.op('gather_rows', x, i), axes=[1, -1]), 3)
        reductions = [n for n in g.nodes.values() if n.kind == 'reduce_sum']
        self.assertEqual([tuple(n.attrs['axes']) for n in reductions], [(2, -1)])
        assert_array_equal(evaluate(g, out).array, np.full((3, 2), 12.0))

    def test_concat_transpose_and_slice(self):
        rng = np.random.default_rng(5)
        xs = rng.normal(size=(4, 3, 3))

        def build(g, n, **options):
            x = g.constant(xs)

            def body(sub, i):
                row = sub.op('gather_rows', x, i)
                corner = sub.op('transpose', sub.op('slice', row, axis=1, start=0, size=2), perm=[1, 0])
                joined = sub.op('concat', row, corner, axis=0)
                return sub.op('stack', joined, joined, axis=1)

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 4)
        self.assertEqual(actual.shape, (4, 5, 2, 3))
        assert_allclose(actual.array, expected.array, atol=1e-12)
        joined = np.concatenate([xs, xs[:, :, :2].transpose(0, 2, 1)], axis=1)
        assert_allclose(actual.array, np.stack([joined, joined], axis=2), atol=1e-12)

    def test_conv2d_folds_iterations_into_batch(self):
        rng = np.random.default_rng(6)
        images = rng.normal(size=(3, 1, 5, 5, 2))
        kernel = rng.normal(size=(3, 3, 2, 4))

        def build(g, n, **options):
            x, f = g.constant(images), g.constant(kernel)
            return pfor(g, lambda sub, i: sub.op('conv2d', sub.op('gather_rows', x, i), f), n, **options)

        expected, actual = both_ways(build, 3)
        assert_allclose(actual.array, expected.array, atol=1e-12)

    def test_unknown_kind_falls_back(self):
        registry = DEFAULT_REGISTRY.copy()
        registry._converters.pop('exp')
        diagnostics = Diagnostics()
        g = Graph()
        x = g.constant(np.linspace(-1.0, 1.0, 8).reshape(4, 2))
        out = pfor(g, lambda sub, i: sub.op('exp', sub.op('gather_rows', x, i)), 4,
                   registry=registry, diagnostics=diagnostics)
        self.assertEqual([e.kind for e in diagnostics.fallbacks()], ['exp'])
        assert_allclose(evaluate(g, out).array, np.exp(np.linspace(-1.0, 1.0, 8).reshape(4, 2)), atol=1e-12)

    def test_fallback_with_zero_iterations(self):
        g = Graph()
        x = g.constant(np.ones((4, 2)))
        out = pfor(g, lambda sub, i: sub.op('exp', sub.op('gather_rows', x, i)), 0,
                   policy=VectorizePolicy(force_fallback=True))
        self.assertEqual(evaluate(g, out).shape, (0, 2))


class TestDispatch(SimpleTestCase):
    def build(self, n, policy=None):
        g = Graph()
        x = g.constant(np.arange(2.0 * n).reshape(n, 2))
        out = pfor(g, lambda sub, i: sub.op('tanh', sub.op('mul', sub.op('gather_rows', x, i), x)), n, policy=policy)
        return g, out

    def test_dispatch_count_does_not_grow_with_iterations(self):
        counts = []
        for n in (2, 8, 32):
            g, out = self.build(n)
            counts.append(run(g, [out])[1])
        self.assertEqual(len(set(counts)), 1)

    def test_forced_fallback_matches_and_costs_more(self):
        g, out = self.build(8)
        (fast,), fast_count = run(g, [out])
        g, out = self.build(8, VectorizePolicy(force_fallback=True))
        (slow,), slow_count = run(g, [out])
        assert_allclose(slow.array, fast.array, atol=1e-12)
        self.assertGreater(slow_count, 8)
        self.assertGreater(slow_count, fast_count)

    def test_materialize(self):
        g = Graph()
        iters = g.constant(4, DTYPE.I64)
        ctx = ConversionContext(g, iters, 4)
        three = g.constant(3.0)
        tiled = ctx.materialize(unstacked(three))
        assert_array_equal(evaluate(g, tiled).array, [3, 3, 3, 3])
        before = len(g.nodes)
        self.assertEqual(ctx.materialize(stacked(tiled)), tiled)
        self.assertEqual(len(g.nodes), before)


class TestControlFlow(SimpleTestCase):
    def _vectorized(self, g, ref):
        return vectorize(g, ref.node)[0]

    def test_cond_example(self):
        g = Graph()
        out = self._vectorized(g, cond_example(g, 4))
        self.assertIn('scatter_rows', kinds(g))
        assert_array_equal(evaluate(g, out).array, [0, 2, 12, 13])

    def test_cond_matches_oracle_for_several_counts(self):
        for n in (0, 1, 3, 7):
            oracle = Graph()
            expected = evaluate(oracle, cond_example(oracle, n))
            g = Graph()
            actual = evaluate(g, self._vectorized(g, cond_example(g, n)))
            self.assertEqual(actual.shape, (n,))
            assert_array_equal(actual.array, expected.array)

    def test_invariant_predicate_has_no_scatter(self):
        g = Graph()
        x = g.constant(np.arange(4.0))

        def body(sub, i):
            row = sub.op('gather_rows', x, i)
            return sub.cond(sub.constant(True), lambda s: s.op('neg', row), lambda s: row)[0]

        out = pfor(g, body, 4)
        self.assertNotIn('scatter_rows', kinds(g))
        assert_array_equal(evaluate(g, out).array, [0, -1, -2, -3])

    def test_all_rows_take_else(self):
        def body(sub, i):
            pred = sub.op('less', i, sub.constant(0))
            return sub.cond(pred, lambda s, v: s.op('mul', v, s.constant(2)),
                            lambda s, v: s.op('add', v, s.constant(10)), captures=[i])[0]

        g = Graph()
        out = pfor(g, body, 3)
        assert_array_equal(evaluate(g, out).array, [10, 11, 12])

    def test_while_example(self):
        g = Graph()
        out = self._vectorized(g, while_example(g, 5))
        assert_array_equal(evaluate(g, out).array, [0, 1, 2, 3, 4])

    def test_while_with_zero_iterations(self):
        g = Graph()
        out = self._vectorized(g, while_example(g, 0))
        self.assertEqual(evaluate(g, out).shape, (0,))

    def test_while_matches_oracle_for_several_counts(self):
        for n in (0, 1, 3, 7):
            oracle = Graph()
            expected = evaluate(oracle, while_example(oracle, n))
            g = Graph()
            actual = evaluate(g, self._vectorized(g, while_example(g, n)))
            assert_array_equal(actual.array, expected.array)
            assert_array_equal(actual.array, np.arange(n))

    def test_loop_variant_while_carries_a_row_mask(self):
        g = Graph()
        self._vectorized(g, while_example(g, 5))
        loop = next(n for n in g.nodes.values() if n.kind == BLOCK_KINDS.WHILE)
        self.assertEqual(g.spec(loop.inputs[0]).dtype, DTYPE.BOOL)
        self.assertEqual(g.spec(loop.inputs[0]).shape, (5,))
        self.assertTrue(all(s.shape is not None and None not in s.shape for s in loop.specs))

    def test_while_with_invariant_condition(self):
        g = Graph()
        x = g.constant(np.arange(3.0))
        diagnostics = Diagnostics()

        def body(sub, i):
            row = sub.op('gather_rows', x, i)
            cond_fn = lambda s, k, acc: s.op('less', k, s.constant(3))  # noqa: E731
            body_fn = lambda s, k, acc: [s.op('add', k, s.constant(1)), s.op('add', acc, row)]  # noqa: E731
            return sub.while_loop(cond_fn, body_fn, [sub.constant(0), sub.constant(0.0)])[1]

        out = pfor(g, body, 3, diagnostics=diagnostics)
        reasons = [e.reason for e in diagnostics.entries if e.kind == BLOCK_KINDS.WHILE]
        self.assertEqual(reasons, ['invariant loop condition'])
        assert_array_equal(evaluate(g, out).array, [0, 3, 6])

    def test_cond_inside_while_matches_oracle(self):
        def build(g, n, **options):
            def body(sub, i):
                def body_fn(s, r, acc):
                    odd = s.op('equal', s.op('sub', r, s.op('mul', s.op('div', r, s.constant(2)), s.constant(2))),
                               s.constant(1))
                    step = s.cond(odd, lambda t: t.op('cast', r, dtype=DTYPE.F64),
                                  lambda t: t.op('neg', t.op('cast', r, dtype=DTYPE.F64)))[0]
                    return [s.op('add', r, s.constant(1)), s.op('add', acc, step)]

                cond_fn = lambda s, r, acc: s.op('less', r, i)  # noqa: E731
                return sub.while_loop(cond_fn, body_fn, [sub.constant(0), sub.constant(0.0)])[1]

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 6)
        assert_array_equal(actual.array, expected.array)

    def test_nested_parfor(self):
        values = np.arange(12.0).reshape(3, 4)

        def build(g, n, **options):
            x = g.constant(values)

            def body(sub, i):
                row = sub.op('gather_rows', x, i)
                return pfor(sub, lambda inner, j: inner.op('mul', inner.op('gather_rows', row, j),
                                                           inner.op('cast', i, dtype=DTYPE.F64)), 4, **options)

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 3)
        assert_array_equal(actual.array, values * np.arange(3.0)[:, None])
        assert_array_equal(actual.array, expected.array)

    def test_cond_inside_nested_parfor(self):
        def build(g, n, **options):
            def body(sub, i):
                def inner_body(inner, j):
                    pred = inner.op('less', j, i)
                    return inner.cond(pred, lambda s: s.op('add', i, j), lambda s: s.op('sub', i, j))[0]

                return pfor(sub, inner_body, 3, **options)

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 3)
        assert_array_equal(expected.array, [[0, -1, -2], [1, 0, -1], [2, 3, 0]])
        assert_array_equal(actual.array, expected.array)

    def test_while_inside_nested_parfor(self):
        def build(g, n, **options):
            def body(sub, i):
                def inner_body(inner, j):
                    bound = inner.op('add', i, j)
                    cond_fn = lambda s, r: s.op('less', r, bound)  # noqa: E731
                    body_fn = lambda s, r: [s.op('add', r, s.constant(1))]  # noqa: E731
                    return inner.while_loop(cond_fn, body_fn, [inner.constant(0)])[0]

                return pfor(sub, inner_body, 4, **options)

            return pfor(g, body, n, **options)

        for n in (0, 1, 3):
            expected, actual = both_ways(build, n)
            self.assertEqual(actual.shape, (n, 4))
            assert_array_equal(actual.array, expected.array)
            assert_array_equal(actual.array, np.add.outer(np.arange(n), np.arange(4)).reshape(n, 4))

    def test_nested_parfor_is_flattened(self):
        values = np.arange(6.0).reshape(2, 3)
        g = Graph()
        x = g.constant(values)
        diagnostics = Diagnostics()

        def body(sub, i):
            row = sub.op('gather_rows', x, i)
            return pfor(sub, lambda inner, j: inner.op('neg', inner.op('gather_rows', row, j)), 3)

        out = pfor(g, body, 2, diagnostics=diagnostics)
        reasons = [e.reason for e in diagnostics.entries if e.kind == BLOCK_KINDS.PARFOR]
        self.assertEqual(reasons, ['flattened nested loop'])
        self.assertNotIn(BLOCK_KINDS.PARFOR, kinds(g))
        assert_array_equal(evaluate(g, out).array, -values)

    def test_invariant_nested_parfor_runs_once(self):
        values = np.arange(4.0)
        g = Graph()
        x = g.constant(values)
        diagnostics = Diagnostics()

        def body(sub, i):
            return pfor(sub, lambda inner, j: inner.op('exp', inner.op('gather_rows', x, j)), 4)

        out = pfor(g, body, 3, diagnostics=diagnostics)
        reasons = [e.reason for e in diagnostics.entries if e.kind == BLOCK_KINDS.PARFOR]
        self.assertEqual(reasons, ['invariant nested loop'])
        self.assertEqual(g.spec(out).shape, (3, 4))
        assert_allclose(evaluate(g, out).array, np.tile(np.exp(values), (3, 1)), atol=1e-12)

    def test_ragged_range_is_rejected(self):
        def body(sub, i):
            return sub.op('reduce_sum', sub.op('range', i), axes=[0])

        g = Graph()
        with self.assertRaises(VectorizeError):
            pfor(g, body, 3)

    def test_row_update_with_loop_variant_target(self):
        values = np.arange(12.0).reshape(4, 3)

        def build(g, n, **options):
            x = g.constant(values)

            def body(sub, i):
                row = sub.op('gather_rows', x, i)
                value = sub.op('reshape', sub.op('cast', i, dtype=DTYPE.F64), shape=[1])
                return sub.op('update_rows', row, sub.constant([2], DTYPE.I64), value)

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 4)
        wanted = values.copy()
        wanted[:, 2] = np.arange(4.0)
        assert_array_equal(actual.array, wanted)
        assert_array_equal(actual.array, expected.array)

    def test_row_scatter_with_loop_variant_parts(self):
        values = np.arange(8.0).reshape(4, 2)

        def build(g, n, **options):
            x = g.constant(values)

            def body(sub, i):
                ends = sub.op('gather_rows', x, i)
                middle = sub.op('reshape', sub.op('cast', i, dtype=DTYPE.F64), shape=[1])
                return sub.op('scatter_rows', sub.constant([0, 2], DTYPE.I64), sub.constant([1], DTYPE.I64),
                              ends, middle, sub.constant(3))

            return pfor(g, body, n, **options)

        expected, actual = both_ways(build, 4)
        assert_array_equal(actual.array, np.stack([values[:, 0], np.arange(4.0), values[:, 1]], axis=1))
        assert_array_equal(actual.array, expected.array)


class TestStatefulConversion(SimpleTestCase):
    def assign_add_graph(self):
        g = Graph()
        g.variable('v', tensor(0))

        def body(sub, i):
            sub.op('assign_add', i, name='v')
            return []

        pfor(g, body, 4)
        return g

    def test_assign_add_is_reduced(self):
        g = self.assign_add_graph()
        self.assertEqual(kinds(g).count('assign_add'), 1)
        store = VariableStore.from_graph(g)
        Interpreter(store).run(g, fetches=[])
        self.assertEqual(store.snapshot()['v'].item(), 6)

    def test_read_variable_runs_once(self):
        g = Graph()
        g.variable('v', tensor(5.0))
        out = pfor(g, lambda sub, i: sub.op('read_variable', name='v'), 3)
        self.assertEqual(kinds(g).count('read_variable'), 1)
        assert_array_equal(evaluate(g, out).array, [5, 5, 5])

    def test_assign_of_loop_variant_value(self):
        g = Graph()
        g.variable('v', tensor(0))

        def body(sub, i):
            sub.op('assign', i, name='v')
            return []

        with self.assertRaises(StatefulNotSupported):
            pfor(g, body, 4)

    def test_assign_of_loop_variant_value_with_fallback_policy(self):
        g = Graph()
        g.variable('v', tensor(0))

        def body(sub, i):
            sub.op('assign', i, name='v')
            return []

        pfor(g, body, 4, policy=VectorizePolicy(stateful=STATEFUL_POLICIES.fallback))
        store = VariableStore.from_graph(g)
        Interpreter(store).run(g, fetches=[])
        self.assertEqual(store.snapshot()['v'].item(), 3)

    def test_invariant_assign_runs_once(self):
        g = Graph()
        g.variable('v', tensor(0.0))

        def body(sub, i):
            sub.op('assign', sub.constant(2.5), name='v')
            return []

        pfor(g, body, 3)
        self.assertEqual(kinds(g).count('assign'), 1)

    def test_random_draw_adds_leading_axis(self):
        g = Graph()
        out = pfor(g, lambda sub, i: sub.op('random_uniform', shape=[2]), 5)
        self.assertEqual(kinds(g).count('random_uniform'), 1)
        value = evaluate(g, out)
        self.assertEqual(value.shape, (5, 2))
        self.assertTrue(((value.array >= 0.0) & (value.array < 1.0)).all())


class TestDiagnostics(SimpleTestCase):
    def test_to_text(self):
        g = Graph()
        x = g.constant(np.ones((2, 2)))
        diagnostics = Diagnostics()
        pfor(g, lambda sub, i: sub.op('neg', sub.op('gather_rows', x, i)), 2, diagnostics=diagnostics)
        lines = diagnostics.to_text().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[0].endswith('gather_rows: fast (gather by the loop variable)'))
        self.assertTrue(lines[1].endswith('neg: fast'))
        self.assertEqual(diagnostics.counts()[PATHS.fallback], 0)

    def test_rejects_non_parfor(self):
        g = Graph()
        with self.assertRaises(VectorizeError):
            vectorize(g, g.constant(1.0).node)

    @patch('pforvec.vectorizer.log')
    def test_logs_one_summary_line(self, log):
        g = Graph()
        x = g.constant(np.ones((2, 2)))
        pfor(g, lambda sub, i: sub.op('neg', sub.op('gather_rows', x, i)), 2)
        self.assertEqual(log.info.call_count, 1)
        self.assertIn('parfor', log.info.call_args[0][0])


class TestConvertedText(SimpleTestCase):
    def test_stacked_lhs_matmul_is_one_folded_matmul(self):
        g = Graph()
        x = g.placeholder('x', [5, 2, 3])
        w = g.placeholder('w', [3, 4])
        g.set_outputs(pfor(g, lambda sub, i: sub.op('matmul', sub.op('gather_rows', x, i), w), 5))
        self.assertEqual(serialize(g).splitlines(), [
            'pforvec-graph 1',
            '0 = placeholder(dtype="F64", name="x", shape=[5, 2, 3])',
            '1 = placeholder(dtype="F64", name="w", shape=[3, 4])',
            '2 = constant(value={"dtype": "I64", "shape": [], "data": [5]})',
            '10 = reshape(shape=[-1, 3], inputs=[[0, 0]])',
            '11 = matmul(inputs=[[10, 0], [1, 0]])',
            '12 = reshape(shape=[-1, 2, 4], inputs=[[11, 0]])',
            'outputs [[12, 0]]',
        ])

    def test_stacked_rhs_matmul_runs_on_the_transposed_problem(self):
        g = Graph()
        a = g.placeholder('a', [2, 3])
        y = g.placeholder('y', [4, 3, 5])
        g.set_outputs(pfor(g, lambda sub, i: sub.op('matmul', a, sub.op('gather_rows', y, i)), 4))
        self.assertEqual(serialize(g).splitlines(), [
            'pforvec-graph 1',
            '0 = placeholder(dtype="F64", name="a", shape=[2, 3])',
            '1 = placeholder(dtype="F64", name="y", shape=[4, 3, 5])',
            '2 = constant(value={"dtype": "I64", "shape": [], "data": [4]})',
            '10 = transpose(perm=[0, 2, 1], inputs=[[1, 0]])',
            '11 = reshape(shape=[-1, 3], inputs=[[10, 0]])',
            '12 = transpose(perm=[1, 0], inputs=[[0, 0]])',
            '13 = matmul(inputs=[[11, 0], [12, 0]])',
            '14 = reshape(shape=[-1, 5, 2], inputs=[[13, 0]])',
            '15 = transpose(perm=[0, 2, 1], inputs=[[14, 0]])',
            'outputs [[15, 0]]',
        ])

    def test_gather_by_loop_variable_is_a_leading_slice(self):
        g = Graph()
        x = g.placeholder('x', [5, 2])
        g.set_outputs(pfor(g, lambda sub, i: sub.op('gather_rows', x, i), 3))
        self.assertEqual(serialize(g).splitlines(), [
            'pforvec-graph 1',
            '0 = placeholder(dtype="F64", name="x", shape=[5, 2])',
            '1 = constant(value={"dtype": "I64", "shape": [], "data": [3]})',
            '7 = slice_leading(axis=0, n=3, inputs=[[0, 0]])',
            'outputs [[7, 0]]',
        ])

    def test_reduce_axes_are_shifted(self):
        g = Graph()
        x = g.placeholder('x', [3, 2, 3, 4])
        g.set_outputs(pfor(g, lambda sub, i: sub.op('reduce_sum', sub.op('gather_rows', x, i), axes=[1, -1]), 3))
        self.assertEqual(serialize(g).splitlines(), [
            'pforvec-graph 1',
            '0 = placeholder(dtype="F64", name="x", shape=[3, 2, 3, 4])',
            '1 = constant(value={"dtype": "I64", "shape": [], "data": [3]})',
            '8 = reduce_sum(axes=[2, -1], inputs=[[0, 0]])',
            'outputs [[8, 0]]',
        ])

    def test_conv2d_folds_iterations_into_the_batch(self):
        g = Graph()
        x = g.placeholder('x', [3, 1, 5, 5, 2])
        f = g.placeholder('f', [3, 3, 2, 4])
        g.set_outputs(pfor(g, lambda sub, i: sub.op('conv2d', sub.op('gather_rows', x, i), f), 3))
        self.assertEqual(serialize(g).splitlines(), [
            'pforvec-graph 1',
            '0 = placeholder(dtype="F64", name="x", shape=[3, 1, 5, 5, 2])',
            '1 = placeholder(dtype="F64", name="f", shape=[3, 3, 2, 4])',
            '2 = constant(value={"dtype": "I64", "shape": [], "data": [3]})',
            '10 = reshape(shape=[-1, 5, 5, 2], inputs=[[0, 0]])',
            '11 = conv2d(inputs=[[10, 0], [1, 0]])',
            '12 = reshape(shape=[-1, 1, 5, 5, 4], inputs=[[11, 0]])',
            'outputs [[12, 0]]',
        ])
