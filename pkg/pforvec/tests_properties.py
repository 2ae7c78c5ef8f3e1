#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Seeded randomized checks: every test loops over a fixed range of seeds, so a
failure names the seed that reproduces it.
"""
# Python Standard Libraries

# Installed packages (via pip)
from django.test import SimpleTestCase
import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Internal project dependencies
from . import converters  # noqa: F401
from . import ops
from . import tensor as T
from . import utils
from .api import pfor
from .autodiff import gradient
from .corpus import ProgramGenerator
from .graph import Graph
from .interpreter import Interpreter, VariableStore, execute
from .ops import BLOCK_KINDS, STATEFUL_KINDS
from .serialization import deserialize, serialize
from .tensor import DTYPE, tensor
from .tests_autodiff import GradientCheckMixin, total
from .vectorizer import PATHS, Diagnostics, VectorizePolicy, vectorize

SEEDS = range(20)
STATELESS = {'elementwise': 0.5, 'linalg': 0.3, 'control': 0.2}


def f64(array):
    return tensor(array, DTYPE.F64)


def i64(array):
    return tensor(np.asarray(array, dtype=np.int64), DTYPE.I64)


def run_all(g, refs):
    return Interpreter(VariableStore.from_graph(g)).run(g, fetches=list(refs))


def broadcastable_shapes(rng, count):
    """count shapes that all broadcast against one random full shape."""
    full = tuple(int(d) for d in rng.integers(1, 4, size=int(rng.integers(0, 4))))
    shapes = []
    for _ in range(count):
        k = int(rng.integers(0, len(full) + 1))
        tail = full[len(full) - k:]
        shapes.append(tuple(1 if rng.random() < 0.3 else d for d in tail))
    return shapes


class TestBroadcastLaws(SimpleTestCase):
    def test_commutative(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a_shape, b_shape = broadcastable_shapes(rng, 2)
            a, b = f64(rng.normal(size=a_shape)), f64(rng.normal(size=b_shape))
            self.assertEqual(T.broadcast_shapes(a_shape, b_shape), T.broadcast_shapes(b_shape, a_shape))
            for op in ('add', 'mul', 'max', 'min', 'equal'):
                assert_array_equal(T.binary_elementwise(op, a, b).array, T.binary_elementwise(op, b, a).array)

    def test_associative(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a_shape, b_shape, c_shape = broadcastable_shapes(rng, 3)
            a, b, c = (f64(rng.normal(size=s)) for s in (a_shape, b_shape, c_shape))
            self.assertEqual(T.broadcast_shapes(T.broadcast_shapes(a_shape, b_shape), c_shape),
                             T.broadcast_shapes(a_shape, T.broadcast_shapes(b_shape, c_shape)))
            for op in ('add', 'mul', 'max', 'min'):
                left = T.binary_elementwise(op, T.binary_elementwise(op, a, b), c)
                right = T.binary_elementwise(op, a, T.binary_elementwise(op, b, c))
                assert_allclose(left.array, right.array, rtol=1e-12, atol=1e-12)


# (kind, attrs, row shapes of the operands)
RESTRUCTURING = [
    ('reduce_sum', {'axes': [1]}, [(2, 3)]),
    ('transpose', {'perm': [1, 0]}, [(2, 3)]),
    ('reshape', {'shape': [3, 2]}, [(2, 3)]),
    ('slice', {'axis': 1, 'start': 1, 'size': 2}, [(2, 3)]),
    ('slice_leading', {'n': 1}, [(2, 3)]),
    ('concat', {'axis': 1}, [(2, 3), (2, 3)]),
    ('stack', {'axis': 0}, [(2, 3), (2, 3)]),
    ('matmul', {}, [(2, 3), (3, 4)]),
    ('matmul', {}, [(2, 2, 3), (2, 3, 4)]),
    ('conv2d', {}, [(1, 4, 4, 2), (3, 3, 2, 2)]),
]


class TestTilingOracle(SimpleTestCase):
    """pfor of one op over table rows equals the op applied row by row."""

    def check(self, kind, attrs, tables, invariant=()):
        n = tables[0].shape[0]
        g = Graph()
        refs = [g.constant(t) for t in tables]

        def body(sub, i):
            args = [ref if k in invariant else sub.op('gather_rows', ref, i) for k, ref in enumerate(refs)]
            return sub.op(kind, *args, **attrs)

        out = pfor(g, body, n)
        (actual,) = run_all(g, [out])
        normalized = ops.get_op(kind).validate_attrs(dict(attrs))
        rows = []
        for i in range(n):
            args = [t if k in invariant else T.gather_rows(t, i64(i)) for k, t in enumerate(tables)]
            rows.append(ops.run_kernel(kind, args, normalized)[0].array)
        expected = np.stack(rows) if rows else np.zeros(actual.shape)
        assert_allclose(actual.array.astype(np.float64), expected.astype(np.float64), rtol=1e-12, atol=1e-12,
                        err_msg=f'{kind} {attrs} invariant={invariant}')

    def test_elementwise_kinds(self):
        rng = np.random.default_rng(11)
        for kind in ops.UNARY_KINDS + ops.BINARY_KINDS:
            arity = 1 if kind in ops.UNARY_KINDS else 2
            if kind == 'logical_not':
                tables = [tensor(rng.random((4, 3)) < 0.5, DTYPE.BOOL)]
            else:
                tables = [f64(rng.uniform(0.5, 2.0, size=(4, 3))) for _ in range(arity)]
            self.check(kind, {}, tables)
            if arity == 2:
                self.check(kind, {}, [tables[0], f64(rng.uniform(0.5, 2.0, size=(3,)))], invariant=(1,))

    def test_restructuring_kinds(self):
        rng = np.random.default_rng(12)
        for kind, attrs, rows in RESTRUCTURING:
            tables = [f64(rng.normal(size=(3,) + row)) for row in rows]
            self.check(kind, attrs, tables)
            if len(rows) == 2:
                self.check(kind, attrs, [tables[0], f64(rng.normal(size=rows[1]))], invariant=(1,))

    def test_empty_loop(self):
        rng = np.random.default_rng(13)
        self.check('tanh', {}, [f64(rng.normal(size=(0, 3)))])
        self.check('matmul', {}, [f64(rng.normal(size=(0, 2, 3))), f64(rng.normal(size=(3, 4)))], invariant=(1,))


class TestRowIndexing(SimpleTestCase):
    def test_scatter_undoes_a_gather_partition(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            count = int(rng.integers(1, 10))
            order = rng.permutation(count)
            cuts = sorted(int(c) for c in rng.integers(0, count + 1, size=int(rng.integers(0, 3))))
            sets = [i64(s) for s in np.split(order, cuts)]
            x = f64(rng.normal(size=(count, 2)))
            parts = [T.gather_rows(x, s) for s in sets]
            assert_array_equal(T.scatter_rows(sets, parts, count).array, x.array)

    def test_scatter_add_is_the_adjoint_of_gather(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            count, picks = int(rng.integers(1, 6)), int(rng.integers(0, 8))
            idx = i64(rng.integers(0, count, size=picks))
            x = f64(rng.normal(size=(count, 3)))
            y = f64(rng.normal(size=(picks, 3)))
            lhs = np.sum(T.gather_rows(x, idx).array * y.array)
            rhs = np.sum(x.array * T.scatter_add_rows(idx, y, count).array)
            assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


class TestConvolutionLaws(SimpleTestCase):
    def operands(self, seed):
        rng = np.random.default_rng(seed)
        kh, kw = (int(k) for k in rng.integers(1, 4, size=2))
        x_shape = (int(rng.integers(1, 3)), int(rng.integers(3, 6)), int(rng.integers(3, 6)), 2)
        f_shape = (kh, kw, 2, int(rng.integers(1, 4)))
        return rng, x_shape, f_shape

    def test_linear_in_input_and_filter(self):
        for seed in SEEDS:
            rng, x_shape, f_shape = self.operands(seed)
            x, y = rng.normal(size=x_shape), rng.normal(size=x_shape)
            f, h = rng.normal(size=f_shape), rng.normal(size=f_shape)
            a, b = rng.normal(size=2)
            combined = T.conv2d(f64(a * x + b * y), f64(f)).array
            assert_allclose(combined, a * T.conv2d(f64(x), f64(f)).array + b * T.conv2d(f64(y), f64(f)).array,
                            rtol=1e-10, atol=1e-10)
            combined = T.conv2d(f64(x), f64(a * f + b * h)).array
            assert_allclose(combined, a * T.conv2d(f64(x), f64(f)).array + b * T.conv2d(f64(x), f64(h)).array,
                            rtol=1e-10, atol=1e-10)

    def test_backprops_are_adjoints(self):
        for seed in SEEDS:
            rng, x_shape, f_shape = self.operands(seed)
            x, f = f64(rng.normal(size=x_shape)), f64(rng.normal(size=f_shape))
            out = T.conv2d(x, f)
            cot = f64(rng.normal(size=out.shape))
            inner = np.sum(out.array * cot.array)
            assert_allclose(np.sum(x.array * T.conv2d_backprop_input(cot, f).array), inner, rtol=1e-10)
            assert_allclose(np.sum(f.array * T.conv2d_backprop_filter(x, cot, f_shape[:2]).array), inner, rtol=1e-10)


UNARY_STEPS = ('tanh', 'sigmoid', 'square', 'neg')
BINARY_STEPS = ('add', 'sub', 'mul')


def random_program(seed, steps=5):
    """Seeded scalar function of two [3] vectors built from differentiable elementwise ops."""
    rng = np.random.default_rng(seed)
    plan = []
    for k in range(steps):
        width = 2 + k
        if rng.random() < 0.5:
            plan.append((str(rng.choice(UNARY_STEPS)), int(rng.integers(width))))
        else:
            plan.append((str(rng.choice(BINARY_STEPS)), int(rng.integers(width)), int(rng.integers(width))))

    def fn(g, x, y):
        pool = [x, y]
        for kind, *operands in plan:
            pool.append(g.op(kind, *(pool[k] for k in operands)))
        return total(g, g.op('tanh', pool[-1]))

    return fn


class TestRandomGradients(GradientCheckMixin, SimpleTestCase):
    def test_against_finite_differences(self):
        for seed in range(12):
            rng = np.random.default_rng(100 + seed)
            self.check(random_program(seed), rng.normal(0.0, 0.5, size=3), rng.normal(0.0, 0.5, size=3))

    def test_gradient_is_linear(self):
        for seed in range(12):
            rng = np.random.default_rng(200 + seed)
            first, second = random_program(seed), random_program(seed + 50)
            a, b = (float(v) for v in rng.normal(size=2))
            g = Graph()
            x = g.constant(f64(rng.normal(0.0, 0.5, size=3)))
            y = g.constant(f64(rng.normal(0.0, 0.5, size=3)))
            f, h = first(g, x, y), second(g, x, y)
            mixed = g.op('add', g.op('mul', g.constant(a), f), g.op('mul', g.constant(b), h))
            g.set_outputs([gradient(g, mixed, x), gradient(g, f, x), gradient(g, h, x)])
            together, grad_f, grad_h = (v.array for v in execute(g))
            assert_allclose(together, a * grad_f + b * grad_h, rtol=1e-10, atol=1e-12)


class TestCondPartition(SimpleTestCase):
    def build(self, g, mask, values, **options):
        m, x = g.constant(tensor(mask, DTYPE.BOOL)), g.constant(f64(values))

        def body(sub, i):
            row = sub.op('gather_rows', x, i)
            return sub.cond(sub.op('gather_rows', m, i), lambda s: s.op('neg', row), lambda s: s.op('square', row))[0]

        return pfor(g, body, len(mask), **options)

    def test_rows_follow_their_branch(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            n = int(rng.integers(0, 9))
            mask, values = rng.random(n) < 0.5, rng.normal(size=(n, 3))
            g = Graph()
            (actual,) = run_all(g, [self.build(g, mask, values)])
            oracle = Graph()
            (expected,) = run_all(oracle, [self.build(oracle, mask, values, vectorize=False)])
            assert_array_equal(actual.array, np.where(mask[:, None], -values, values ** 2))
            assert_array_equal(actual.array, expected.array)


def corpus_cases(weights, count, iters):
    generator = ProgramGenerator(7, max_depth=3, weights=weights)
    for k in range(count):
        for n in iters:
            yield k, n, generator


def variant_nodes(body):
    """Ids of body nodes whose value depends on the loop variable or a random draw."""
    variant = set()
    for node in body.topo_order():
        if node.kind in ('loop_var', 'random_uniform') or any(r.node in variant for r in node.inputs):
            variant.add(node.id)
    return variant


class TestCorpusProperties(SimpleTestCase):
    def test_invariant_nodes_do_not_depend_on_the_loop(self):
        for k, n, generator in corpus_cases(None, 20, (3,)):
            case = generator.build(k, n)
            body = case.graph.nodes[case.node_id].block.subgraphs['body']
            variant, top = variant_nodes(body), set(body.nodes)
            diagnostics = Diagnostics()
            vectorize(case.graph, case.node_id, diagnostics=diagnostics)
            invariant = {e.node_id for e in diagnostics.entries if e.path == PATHS.invariant and e.node_id in top}
            self.assertFalse(invariant & variant, f'graph {k}: {sorted(invariant & variant)}')

    def test_fast_paths_agree_with_generic_and_fallback(self):
        policies = [VectorizePolicy(fast_paths=False), VectorizePolicy(force_fallback=True)]
        for k, n, generator in corpus_cases(STATELESS, 15, (1, 4)):
            case = generator.build(k, n)
            vectorize(case.graph, case.node_id)
            expected = execute(case.graph)
            for policy in policies:
                other = generator.build(k, n)
                vectorize(other.graph, other.node_id, policy=policy)
                self.assertEqual(utils.compare_outputs(expected, execute(other.graph), 1e-9), [],
                                 f'graph {k} n={n} {policy}')

    def test_serialization_is_a_fixed_point(self):
        for k, n, generator in corpus_cases(None, 20, (2,)):
            case = generator.build(k, n)
            text = serialize(case.graph)
            self.assertEqual(serialize(deserialize(text)), text, f'graph {k}')
            vectorize(case.graph, case.node_id)
            text = serialize(case.graph)
            self.assertEqual(serialize(deserialize(text)), text, f'graph {k} vectorized')

    def test_static_shapes_match_runtime_shapes(self):
        for k, n, generator in corpus_cases(STATELESS, 15, (0, 3)):
            case = generator.build(k, n)
            vectorize(case.graph, case.node_id)
            g = case.graph
            refs = [r for node in g.nodes.values() if node.kind not in STATEFUL_KINDS for r in node.outputs()]
            for ref, value in zip(refs, run_all(g, refs)):
                spec = g.spec(ref)
                self.assertEqual(spec.dtype, value.dtype, f'graph {k} n={n} node {ref.node}')
                if spec.shape is None:
                    continue
                self.assertEqual(len(spec.shape), len(value.shape), f'graph {k} n={n} node {ref.node}')
                for static, actual in zip(spec.shape, value.shape):
                    if static is not None:
                        self.assertEqual(static, actual, f'graph {k} n={n} node {ref.node} {spec.describe()}')

    def test_vectorized_corpus_has_no_parfor_left(self):
        for k, n, generator in corpus_cases(None, 10, (3,)):
            case = generator.build(k, n)
            vectorize(case.graph, case.node_id)
            self.assertNotIn(BLOCK_KINDS.PARFOR, [node.kind for node in case.graph.nodes.values()])
