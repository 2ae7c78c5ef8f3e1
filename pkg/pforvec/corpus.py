# -*- coding:utf-8 -*-
"""
Random PARFOR programs for oracle verification.

A case is fully determined by (seed, index, iterations): building it twice gives
two identical graphs, one kept for the interpreter and one handed to the
vectorizer. Bodies mix elementwise math, linear algebra, nested COND and WHILE
blocks and top-level stateful ops on the scalar variable 'acc'. Values stay
bounded (products go through tanh, divisions and logs are guarded) so outputs
can be compared with an absolute tolerance.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import logging

# Installed packages (via pip)
from model_utils import Choices
import numpy as np

# Internal project dependencies
from .graph import Graph
from .tensor import DTYPE, tensor, zeros


log = logging.getLogger(__name__)

CATEGORIES = Choices('elementwise', 'linalg', 'control', 'stateful')
DEFAULT_WEIGHTS = {
    CATEGORIES.elementwise: 0.60,
    CATEGORIES.linalg: 0.15,
    CATEGORIES.control: 0.15,
    CATEGORIES.stateful: 0.10,
}
TABLE_ROWS = 8
VARIABLE = 'acc'

SHAPES = ((), (3,), (3, 3))
BINARY = ('add', 'sub', 'mul', 'div', 'max', 'min')
UNARY = ('neg', 'exp', 'log', 'relu', 'tanh', 'sigmoid', 'square', 'compare')


@dataclass
class Case:
    index: int
    iters: int
    graph: Graph
    node_id: int
    random_outputs: tuple = ()
    kinds: set = field(default_factory=set)


@dataclass
class _Value:
    ref: object
    shape: tuple


def _broadcast(a, b):
    if a == b or not b:
        return a
    if not a:
        return b
    if len(a) < len(b) and a == b[-len(a):]:
        return b
    if len(b) < len(a) and b == a[-len(b):]:
        return a
    return None


class ProgramGenerator(object):
    """
    Deterministic generator of PARFOR bodies. max_depth bounds COND/WHILE
    nesting; weights pick the category of each generated op.
    """

    def __init__(self, seed, max_depth=3, weights=None, steps=(3, 6)):
        self.seed = int(seed)
        self.max_depth = int(max_depth)
        weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
        unknown = {c for c in weights if c not in CATEGORIES}
        if unknown:
            raise ValueError(f'unknown generator categories {sorted(unknown)}')
        self.weights = {c: float(weights.get(c, 0.0)) for c, _ in CATEGORIES}
        if sum(self.weights.values()) <= 0:
            raise ValueError('generator weights must not all be zero')
        self.steps = steps

    def build(self, index, iters):
        """Graph whose only block is the PARFOR of case index running iters times."""
        return _CaseBuilder(self, index).build(iters)


class _CaseBuilder(object):

    def __init__(self, generator, index):
        self.generator = generator
        self.index = index
        self.rng = np.random.default_rng([generator.seed, index])
        self.last_effect = None
        self.random_outputs = []
        self.kinds = set()

    # Randomness helpers

    def choose(self, options):
        return options[int(self.rng.integers(len(options)))]

    def category(self, depth):
        weights = dict(self.generator.weights)
        if depth >= self.generator.max_depth:
            weights[CATEGORIES.control] = 0.0
        else:
            weights[CATEGORIES.control] *= 0.5 ** depth
        if depth > 0:
            weights[CATEGORIES.stateful] = 0.0
        names = list(weights)
        p = np.array([weights[n] for n in names])
        if p.sum() <= 0:
            return CATEGORIES.elementwise
        return names[int(self.rng.choice(len(names), p=p / p.sum()))]

    def table(self, shape):
        return tensor(self.rng.uniform(-1.0, 1.0, size=shape), DTYPE.F64)

    # Graph construction

    def build(self, iters):
        graph = Graph()
        graph.variable(VARIABLE, tensor(0.0, DTYPE.F64))
        tables = {
            'rows': graph.constant(self.table((TABLE_ROWS, 3))),
            'mats': graph.constant(self.table((TABLE_ROWS, 3, 3))),
            'w': graph.constant(self.table((3, 3))),
            'v': graph.constant(self.table((3,))),
            'c': graph.constant(self.table(())),
        }
        n_outputs = 1 + int(self.rng.integers(3))

        def body(sub, i):
            pool = [
                _Value(sub.op('cast', i, dtype=DTYPE.F64), ()),
                _Value(sub.op('gather_rows', tables['rows'], i), (3,)),
                _Value(sub.op('gather_rows', tables['mats'], i), (3, 3)),
                _Value(tables['w'], (3, 3)),
                _Value(tables['v'], (3,)),
                _Value(tables['c'], ()),
            ]
            fresh = self.fill(sub, pool, 0)
            picks = (fresh or pool)[-n_outputs:]
            outputs = [v.ref for v in picks]
            if self.random_outputs:
                outputs.append(self.random_outputs[0])
            return outputs

        node_id = graph.build_block('parfor', {'body': body}, iters=int(iters))
        node = graph.nodes[node_id]
        graph.set_outputs(node.outputs())
        random_ports = (len(node.outputs()) - 1,) if self.random_outputs else ()
        return Case(self.index, int(iters), graph, node_id, random_ports, self.kinds)

    def fill(self, sub, pool, depth):
        low, high = self.generator.steps
        fresh = []
        for _ in range(int(self.rng.integers(low, high + 1))):
            value = self.step(sub, pool, depth)
            if value is not None:
                pool.append(value)
                fresh.append(value)
        return fresh

    def step(self, sub, pool, depth):
        category = self.category(depth)
        if category == CATEGORIES.elementwise:
            return self.elementwise(sub, pool)
        if category == CATEGORIES.linalg:
            return self.linalg(sub, pool)
        if category == CATEGORIES.control:
            return self.control(sub, pool, depth)
        return self.stateful(sub, pool)

    def pick(self, pool, shapes=SHAPES):
        candidates = [v for v in pool if v.shape in shapes]
        return self.choose(candidates) if candidates else None

    def coerce(self, sub, value, shape):
        """A value of exactly shape, by reducing and broadcasting."""
        if value.shape == shape:
            return value.ref
        ref = value.ref
        if _broadcast(value.shape, shape) != shape:
            ref = sub.op('reduce_sum', ref, axes=list(range(len(value.shape))))
        return sub.op('add', ref, sub.constant(zeros(shape, DTYPE.F64)))

    def elementwise(self, sub, pool):
        kind = self.choose(BINARY + UNARY)
        self.kinds.add(kind)
        a = self.pick(pool)
        if kind in UNARY:
            ref = a.ref
            if kind == 'exp':
                ref = sub.op('exp', sub.op('tanh', ref))
            elif kind == 'log':
                ref = sub.op('log', sub.op('add', sub.constant(1.0), sub.op('square', ref)))
            elif kind == 'square':
                ref = sub.op('square', sub.op('tanh', ref))
            elif kind == 'compare':
                flag = sub.op('less', ref, sub.constant(float(self.rng.uniform(-0.5, 0.5))))
                if self.rng.random() < 0.5:
                    flag = sub.op('logical_not', flag)
                ref = sub.op('cast', flag, dtype=DTYPE.F64)
            else:
                ref = sub.op(kind, ref)
            return _Value(ref, a.shape)
        b = self.choose([v for v in pool if _broadcast(a.shape, v.shape) is not None])
        shape = _broadcast(a.shape, b.shape)
        if kind == 'div':
            denominator = sub.op('add', sub.constant(1.0), sub.op('square', b.ref))
            return _Value(sub.op('div', a.ref, denominator), shape)
        if kind == 'mul':
            return _Value(sub.op('tanh', sub.op('mul', a.ref, b.ref)), shape)
        return _Value(sub.op(kind, a.ref, b.ref), shape)

    def linalg(self, sub, pool):
        kind = self.choose(('matmul', 'reduce_sum', 'concat', 'transpose', 'stack', 'gather'))
        self.kinds.add(kind)
        if kind == 'matmul':
            a = self.coerce(sub, self.pick(pool), (3, 3))
            b = self.coerce(sub, self.pick(pool), (3, 3))
            return _Value(sub.op('tanh', sub.op('matmul', a, b)), (3, 3))
        if kind == 'reduce_sum':
            a = self.pick(pool, ((3,), (3, 3)))
            if a is None:
                return None
            axes = self.choose(([0], [-1])) if len(a.shape) == 2 else [0]
            keep = tuple(d for k, d in enumerate(a.shape) if k != axes[0] % len(a.shape))
            return _Value(sub.op('reduce_sum', a.ref, axes=axes), keep)
        if kind == 'concat':
            shape = self.choose(((3,), (3, 3)))
            a = self.coerce(sub, self.pick(pool), shape)
            b = self.coerce(sub, self.pick(pool), shape)
            axis = int(self.rng.integers(len(shape)))
            joined = sub.op('concat', a, b, axis=axis)
            start = int(self.rng.integers(4))
            return _Value(sub.op('slice', joined, axis=axis, start=start, size=3), shape)
        if kind == 'transpose':
            a = self.coerce(sub, self.pick(pool), (3, 3))
            return _Value(sub.op('transpose', a, perm=[1, 0]), (3, 3))
        if kind == 'stack':
            a = self.coerce(sub, self.pick(pool), (3,))
            b = self.coerce(sub, self.pick(pool), (3,))
            axis = int(self.rng.integers(2))
            pair = sub.op('stack', a, b, axis=axis)
            return _Value(sub.op('reduce_sum', pair, axes=[axis]), (3,))
        a = self.coerce(sub, self.pick(pool), (3, 3))
        rows = sub.constant(tensor([2, 0], DTYPE.I64))
        picked = sub.op('gather_rows', a, rows)
        return _Value(sub.op('reduce_sum', picked, axes=[0]), (3,))

    def control(self, sub, pool, depth):
        if self.rng.random() < 0.5:
            self.kinds.add('cond')
            return self.cond(sub, pool, depth)
        self.kinds.add('while')
        return self.while_loop(sub, pool, depth)

    def predicate(self, sub, pool):
        scalar = self.pick(pool, ((),))
        if self.rng.random() < 0.5:
            return sub.op('less', scalar.ref, sub.constant(float(self.rng.uniform(-0.5, 0.5))))
        # loop-variable dependent split; pool[0] is the iteration number as F64
        return sub.op('less', pool[0].ref, sub.constant(float(self.rng.integers(1, 5)) - 0.5))

    def cond(self, sub, pool, depth):
        shape = self.choose(SHAPES)
        pred = self.predicate(sub, pool)

        def branch(inner):
            local = list(pool)
            fresh = self.fill(inner, local, depth + 1)
            return [self.coerce(inner, (fresh or local)[-1], shape)]

        (out,) = sub.cond(pred, branch, branch)
        return _Value(out, shape)

    def while_loop(self, sub, pool, depth):
        shape = self.choose(SHAPES)
        start = self.coerce(sub, self.pick(pool), shape)
        if self.rng.random() < 0.5:
            bound = sub.constant(float(self.rng.integers(1, 4)))
        else:
            bound = sub.op('add', sub.op('mul', pool[0].ref, sub.constant(0.5)), sub.constant(1.0))
        zero = sub.constant(0.0)

        def cond_fn(inner, count, acc):
            return inner.op('less', count, bound)

        def body_fn(inner, count, acc):
            local = list(pool) + [_Value(acc, shape), _Value(count, ())]
            fresh = self.fill(inner, local, depth + 1)
            update = self.coerce(inner, (fresh or local)[-1], shape)
            scaled = inner.op('mul', update, inner.constant(0.5))
            return [inner.op('add', count, inner.constant(1.0)), inner.op('tanh', inner.op('add', acc, scaled))]

        _, out = sub.while_loop(cond_fn, body_fn, [zero, start])
        return _Value(out, shape)

    def stateful(self, sub, pool):
        kind = self.choose(('read_variable', 'assign_add', 'assign', 'random_uniform'))
        self.kinds.add(kind)
        ctrl = [self.last_effect] if self.last_effect is not None else []
        if kind == 'random_uniform':
            if not self.random_outputs:
                self.random_outputs.append(sub.op('random_uniform', shape=[2]))
            return None
        if kind == 'read_variable':
            ref = sub.op('read_variable', name=VARIABLE, ctrl=ctrl)
            self.last_effect = ref
            return _Value(ref, ())
        if kind == 'assign_add':
            value = self.pick(pool)
            total = sub.op('reduce_sum', value.ref, axes=list(range(len(value.shape))))
            self.last_effect = sub.op('assign_add', total, name=VARIABLE, ctrl=ctrl)
            return None
        # assign needs a loop-invariant value
        self.last_effect = sub.op('assign', sub.constant(float(self.rng.uniform(-1.0, 1.0))), name=VARIABLE, ctrl=ctrl)
        return None
