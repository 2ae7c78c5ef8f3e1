#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
import numpy as np
from numpy.testing import assert_array_equal

# Internal project dependencies
from .exceptions import (
    ArityMismatch, BudgetExceeded, CycleDetected, DTypeMismatch, GraphError, IncompatibleShapes, MissingFeed,
    ParseError,
)
from .graph import Graph, Ref
from .interpreter import Interpreter, RngState, VariableStore, execute, execute_parfor_simd, rng_draw
from .ops import BLOCK_KINDS, TensorSpec
from .serialization import HEADER, deserialize, serialize
from .tensor import DTYPE, tensor


def cond_example(g, n):
    """parfor over i of (2 * i if i < 2 else i + 10)."""
    def body(sub, i):
        pred = sub.op('less', i, sub.constant(2))
        then_fn = lambda inner, x: inner.op('mul', x, inner.constant(2))  # noqa: E731
        else_fn = lambda inner, x: inner.op('add', x, inner.constant(10))  # noqa: E731
        return sub.cond(pred, then_fn, else_fn, captures=[i])[0]

    return g.parfor(n, body)[0]


def while_example(g, n):
    """parfor over i of (r = 0; while r < i: r += 1)."""
    def body(sub, i):
        cond_fn = lambda inner, r, bound: inner.op('less', r, bound)  # noqa: E731
        body_fn = lambda inner, r, bound: [inner.op('add', r, inner.constant(1))]  # noqa: E731
        return sub.while_loop(cond_fn, body_fn, [sub.constant(0)], captures=[i])[0]

    return g.parfor(n, body)[0]


def add_sub_example(g, a, b, n):
    def body(sub, i):
        a_i = sub.op('gather_rows', a, i)
        b_i = sub.op('gather_rows', b, i)
        return [sub.op('add', a_i, b_i), sub.op('sub', a_i, b_i)]

    return g.parfor(n, body)


class TestGraphBuilding(SimpleTestCase):
    def test_add_node_infers_shapes(self):
        g = Graph()
        x = g.constant([1.0, 2.0])
        y = g.op('neg', x)
        self.assertEqual(len(g.nodes), 2)
        self.assertEqual(g.spec(y).shape, (2,))
        self.assertEqual(g.spec(y).dtype, DTYPE.F64)

    def test_static_shape_errors(self):
        g = Graph()
        with self.assertRaises(IncompatibleShapes):
            g.op('matmul', g.constant(np.ones((2, 3))), g.constant(np.ones((4, 5))))
        with self.assertRaises(DTypeMismatch):
            g.op('gather_rows', g.constant(np.ones((2, 3))), g.constant(1.0))

    def test_node_ids_are_unique_across_subgraphs(self):
        g = Graph()
        x = g.constant(np.ones((10, 20)))
        outputs = g.parfor(10, lambda sub, i: sub.op('gather_rows', x, i))
        ids = [nid for sub in g.all_graphs() for nid in sub.nodes]
        self.assertEqual(len(ids), len(set(ids)))
        self.assertEqual(g.spec(outputs[0]).shape, (10, 20))

    def test_gather_on_loop_var_in_body(self):
        g = Graph()
        x = g.constant(np.ones((10, 20)))
        node_id = g.build_block(BLOCK_KINDS.PARFOR, {'body': lambda sub, i: sub.op('gather_rows', x, i)}, iters=10)
        body = g.nodes[node_id].block.subgraphs['body']
        self.assertEqual(body.spec(body.outputs[0]).shape, (20,))
        # x is reached through a capture
        self.assertEqual(g.nodes[node_id].inputs[1], x)

    def test_parfor_with_two_outputs(self):
        g = Graph()
        a = g.constant(np.ones((10, 20)))
        b = g.constant(np.ones((10, 20)))
        outputs = add_sub_example(g, a, b, 10)
        self.assertEqual(len(outputs), 2)
        self.assertEqual([g.spec(r).shape for r in outputs], [(10, 20), (10, 20)])

    def test_while_block_has_one_carried(self):
        g = Graph()
        while_example(g, 3)
        (block_node,) = [n for n in g.nodes.values() if n.kind == BLOCK_KINDS.PARFOR]
        body = block_node.block.subgraphs['body']
        (loop,) = [n for n in body.nodes.values() if n.kind == BLOCK_KINDS.WHILE]
        self.assertEqual(loop.block.n_carried, 1)

    def test_cond_else_forwarding_captures(self):
        g = Graph()
        x = g.constant([1.0, 2.0])
        (out,) = g.cond(g.constant(True), lambda s, v: s.op('neg', v), lambda s, v: v, captures=[x])
        self.assertEqual(g.spec(out).shape, (2,))
        self.assertEqual(g.validate(), [])

    def test_while_body_arity_mismatch(self):
        g = Graph()
        with self.assertRaises(ArityMismatch):
            g.while_loop(lambda s, r: s.op('less', r, s.constant(3)),
                         lambda s, r: [r, r], [g.constant(0)])

    def test_topo_order_breaks_ties_by_id(self):
        g = Graph()
        a = g.constant(1.0)
        b = g.op('neg', a)
        c = g.op('exp', a)
        d = g.op('add', b, c)
        self.assertEqual([n.id for n in g.topo_order()], [a.node, b.node, c.node, d.node])

    def test_control_deps_order_nodes(self):
        g = Graph()
        g.variable('v', tensor(0.0))
        write = g.op('assign_add', g.constant(1.0), name='v')
        read = g.op('read_variable', name='v', ctrl=[write])
        order = [n.id for n in g.topo_order()]
        self.assertLess(order.index(write.node), order.index(read.node))

    def test_cycle_detected(self):
        g = Graph()
        a = g.constant(1.0)
        b = g.op('neg', a)
        c = g.op('add', b, b)
        g.nodes[b.node].inputs = (c,)
        with self.assertRaises(CycleDetected) as context:
            g.topo_order()
        self.assertEqual(context.exception.nodes, sorted([b.node, c.node]))
        self.assertTrue(any(isinstance(e, CycleDetected) for e in g.validate()))

    def test_remove_node_with_users(self):
        g = Graph()
        a = g.constant(1.0)
        g.op('neg', a)
        with self.assertRaises(GraphError):
            g.remove_node(a.node)

    def test_replace_all_uses(self):
        g = Graph()
        a = g.constant(1.0)
        b = g.constant(2.0)
        c = g.op('neg', a)
        g.set_outputs([a])
        g.replace_all_uses(a, b)
        self.assertEqual(g.nodes[c.node].inputs, (b,))
        self.assertEqual(g.outputs, [b])

    def test_validate_example_graph(self):
        g = Graph()
        a = g.constant(np.ones((10, 20)))
        b = g.constant(np.ones((10, 20)))
        g.set_outputs(add_sub_example(g, a, b, 10))
        self.assertEqual(g.validate(), [])


class TestSerialization(SimpleTestCase):
    def test_empty_graph(self):
        text = serialize(Graph())
        self.assertEqual(text.strip(), HEADER)
        self.assertEqual(serialize(deserialize(text)), text)

    def test_block_round_trip(self):
        g = Graph()
        g.variable('acc', tensor(0.0))
        out = cond_example(g, 4)
        g.set_outputs([out])
        text = serialize(g)
        restored = deserialize(text)
        self.assertEqual(serialize(restored), text)
        self.assertEqual(restored.validate(), [])
        assert_array_equal(execute(restored)[0].array, [0, 2, 12, 13])

    def test_restored_graph_allocates_fresh_ids(self):
        g = Graph()
        g.constant(1.0)
        g.constant(2.0)
        restored = deserialize(serialize(g))
        ref = restored.constant(3.0)
        self.assertNotIn(ref.node, (0, 1))

    def test_unknown_kind(self):
        with self.assertRaises(ParseError) as context:
            deserialize(f'{HEADER}\nnode 3 = frobnicate()\n')
        self.assertIn('frobnicate', str(context.exception))
        self.assertEqual(context.exception.line, 2)

    def test_bad_header(self):
        with self.assertRaises(ParseError):
            deserialize('not a graph\n')


class TestInterpreter(SimpleTestCase):
    def test_straight_line(self):
        g = Graph()
        g.set_outputs(g.op('add', g.constant(2), g.constant(3)))
        self.assertEqual(execute(g)[0].item(), 5)

    def test_while(self):
        g = Graph()
        (r,) = g.while_loop(lambda s, r: s.op('less', r, s.constant(4)),
                            lambda s, r: [s.op('add', r, s.constant(1))], [g.constant(0)])
        g.set_outputs(r)
        self.assertEqual(execute(g)[0].item(), 4)

    def test_assign_add_chain(self):
        g = Graph()
        g.variable('v', tensor(1.0))
        first = g.op('assign_add', g.constant(2.0), name='v')
        second = g.op('assign_add', g.constant(2.0), name='v', ctrl=[first])
        g.set_outputs(g.op('read_variable', name='v', ctrl=[second]))
        store = VariableStore.from_graph(g)
        self.assertEqual(execute(g, store=store)[0].item(), 5.0)
        self.assertEqual(store.snapshot()['v'].item(), 5.0)

    def test_placeholder_feeds(self):
        g = Graph()
        x = g.placeholder('x', (2,))
        g.set_outputs(g.op('square', x))
        assert_array_equal(execute(g, feeds={'x': [3.0, 4.0]})[0].array, [9.0, 16.0])
        with self.assertRaises(MissingFeed):
            execute(g)

    def test_parfor_add_sub(self):
        rng = np.random.default_rng(0)
        a_value = rng.normal(size=(10, 20))
        b_value = rng.normal(size=(10, 20))
        g = Graph()
        g.set_outputs(add_sub_example(g, g.constant(a_value), g.constant(b_value), 10))
        total, diff = execute(g)
        assert_array_equal(total.array, a_value + b_value)
        assert_array_equal(diff.array, a_value - b_value)

    def test_parfor_simd_entry_point(self):
        g = Graph()
        x = g.constant(np.arange(6.0).reshape(3, 2))
        node_id = g.build_block(BLOCK_KINDS.PARFOR, {'body': lambda sub, i, v: sub.op('gather_rows', v, i)},
                                captures=[x], iters=3)
        (out,) = execute_parfor_simd(g.nodes[node_id], 2, [tensor(np.arange(6.0).reshape(3, 2))])
        assert_array_equal(out.array, [[0, 1], [2, 3]])

    def test_parfor_zero_iterations(self):
        g = Graph()
        x = g.constant(np.ones((4, 3)))
        g.set_outputs(g.parfor(0, lambda sub, i: sub.op('gather_rows', x, i)))
        self.assertEqual(execute(g)[0].shape, (0, 3))

    def test_parfor_cond(self):
        g = Graph()
        g.set_outputs(cond_example(g, 4))
        assert_array_equal(execute(g)[0].array, [0, 2, 12, 13])

    def test_parfor_while(self):
        g = Graph()
        g.set_outputs(while_example(g, 5))
        assert_array_equal(execute(g)[0].array, [0, 1, 2, 3, 4])

    def test_lock_step_assign_add_is_order_free(self):
        g = Graph()
        g.variable('v', tensor(0))

        def body(sub, i):
            sub.op('assign_add', i, name='v')
            return []

        g.parfor(4, body)
        store = VariableStore.from_graph(g)
        execute(g, store=store)
        self.assertEqual(store.snapshot()['v'].item(), 6)

    def test_dispatch_count_and_budget(self):
        g = Graph()
        x = g.constant(np.ones((4, 3)))
        g.set_outputs(g.parfor(4, lambda sub, i: sub.op('neg', sub.op('gather_rows', x, i))))
        interpreter = Interpreter(VariableStore.from_graph(g))
        interpreter.run(g)
        # x, iters, parfor once; gather and neg once per lane
        self.assertEqual(interpreter.dispatch_count, 3 + 2 * 4)
        with self.assertRaises(BudgetExceeded):
            execute(g, step_budget=5)


class TestRng(SimpleTestCase):
    def test_same_state_same_draw(self):
        first = rng_draw(RngState(seed=7, counter=3), (2, 3))
        second = rng_draw(RngState(seed=7, counter=3), (2, 3))
        assert_array_equal(first.array, second.array)
        self.assertTrue(((first.array >= 0.0) & (first.array < 1.0)).all())

    def test_empty_draw_advances_counter(self):
        rng = RngState(seed=1)
        value = rng_draw(rng, (0,))
        self.assertEqual(value.shape, (0,))
        self.assertEqual(rng.counter, 1)

    def test_successive_draws_differ(self):
        rng = RngState(seed=1)
        self.assertFalse(np.array_equal(rng_draw(rng, (4,)).array, rng_draw(rng, (4,)).array))

    def test_negative_seed_is_taken_modulo_2_64(self):
        negative = rng_draw(RngState(seed=-1), (3,))
        wrapped = rng_draw(RngState(seed=2 ** 64 - 1), (3,))
        assert_array_equal(negative.array, wrapped.array)
        self.assertFalse(np.array_equal(negative.array, rng_draw(RngState(seed=1), (3,)).array))


class TestSpecs(SimpleTestCase):
    def test_describe(self):
        self.assertEqual(TensorSpec(DTYPE.F64, (None, 3)).describe(), 'F64[?,3]')
        self.assertFalse(TensorSpec(DTYPE.F64, (None, 3)).static)
        self.assertEqual(TensorSpec(DTYPE.I64, (2, 3)).size, 6)

    def test_dim_size_folds_static_dims(self):
        g = Graph()
        size = g.op('dim_size', g.constant(np.ones((5, 2))))
        self.assertEqual(g.spec(size).value.item(), 5)
        self.assertEqual(g.spec(g.op('nonzero', g.constant([True, False]))).shape, (None,))

    def test_refs_are_hashable(self):
        self.assertEqual({Ref(1, 0): 'a'}[Ref(1)], 'a')
