# -*- coding:utf-8 -*-
"""
Reference executor.

Every value is held per lane: a lane is a tuple naming one iteration of every
enclosing PARFOR (the top level is the single lane ()). Each node runs in lock
step over the active set of lanes, in ascending lane order, so a PARFOR body is
executed under SIMD semantics: COND partitions the active set, WHILE shrinks it
until it is empty. This is the oracle the vectorizer is checked against.
"""
# Python Standard Libraries
from dataclasses import dataclass
import logging
import threading

# Installed packages (via pip)
import numpy as np

# Internal project dependencies
from . import ops
from . import tensor as T
from .exceptions import (
    BudgetExceeded,
    DTypeMismatch,
    ExecutionError,
    IncompatibleShapes,
    MissingFeed,
    PforvecError,
    ShapeVariance,
)
from .graph import Ref
from .ops import BLOCK_KINDS
from .tensor import DTYPE, TensorValue


log = logging.getLogger(__name__)

READ = 'read'
WRITE = 'write'


class VariableStore(object):
    """
    Named mutable tensors. Every access is serialized and recorded in the log as
    (node_id, read|write, name).
    """

    def __init__(self, initial=None):
        self.values = dict(initial or {})
        self.log = []
        self._lock = threading.Lock()

    @classmethod
    def from_graph(cls, graph):
        return cls(graph.variables)

    def _get(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise ExecutionError(f'unknown variable {name!r}')

    def read(self, name, node_id=None):
        with self._lock:
            value = self._get(name)
            self.log.append((node_id, READ, name))
            return value

    def write(self, name, value, node_id=None):
        with self._lock:
            self._write(name, value, node_id)

    def add(self, name, delta, node_id=None):
        with self._lock:
            current = self._get(name)
            self._write(name, T.binary_elementwise('add', current, delta), node_id)

    def _write(self, name, value, node_id):
        current = self._get(name)
        if value.dtype != current.dtype:
            raise DTypeMismatch(f'variable {name!r} is {current.dtype}, cannot store {value.dtype}')
        if value.shape != current.shape:
            raise IncompatibleShapes(
                f'variable {name!r} has shape {list(current.shape)}, cannot store {list(value.shape)}')
        self.values[name] = value
        self.log.append((node_id, WRITE, name))

    def snapshot(self):
        with self._lock:
            return dict(self.values)


# seeds and counters are taken modulo 2**64
SEED_MASK = 2 ** 64 - 1


@dataclass
class RngState:
    seed: int = 0
    counter: int = 0


def rng_draw(rng, shape):
    """
    Uniform F64 draw in [0, 1). Each draw gets its own Philox stream keyed by
    (seed, counter); the counter advances by one per draw whatever the shape.
    """
    key = np.array([rng.seed & SEED_MASK, rng.counter & SEED_MASK], dtype=np.uint64)
    generator = np.random.Generator(np.random.Philox(key=key))
    values = generator.random(tuple(int(d) for d in shape))
    rng.counter += 1
    return TensorValue(DTYPE.F64, values)


@dataclass(frozen=True)
class ActiveSet:
    """Sorted distinct lanes still executing the current block."""
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, 'indices', tuple(sorted(set(self.indices))))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __bool__(self):
        return bool(self.indices)

    def partition(self, flags):
        """(lanes whose flag is true, lanes whose flag is false)."""
        taken = [lane for lane in self.indices if flags[lane]]
        left = [lane for lane in self.indices if not flags[lane]]
        return ActiveSet(tuple(taken)), ActiveSet(tuple(left))


TOP = ActiveSet(((),))


def _truth(value):
    return bool(value.array.item())


class Interpreter(object):
    """
    Executes graphs over one VariableStore and RngState, counting every node
    dispatch (once per active lane) against an optional step budget.
    """

    def __init__(self, store=None, rng=None, step_budget=None):
        self.store = store if store is not None else VariableStore()
        self.rng = rng if rng is not None else RngState()
        self.step_budget = step_budget
        self.dispatch_count = 0

    def run(self, graph, feeds=None, fetches=None):
        env = self._run_graph(graph, TOP, {}, feeds or {})
        refs = graph.outputs if fetches is None else fetches
        return [env[ref][()] for ref in refs]

    def run_parfor(self, node, n, captures, feeds=None):
        """
        Run one PARFOR block for n iterations with the given capture values and
        return its stacked outputs.
        """
        capture_values = {k: {(): value} for k, value in enumerate(captures)}
        results = self._run_parfor_lanes(node, TOP, {(): int(n)}, capture_values, feeds or {})
        return [port[()] for port in results]

    def _count(self, amount):
        self.dispatch_count += amount
        if self.step_budget is not None and self.dispatch_count > self.step_budget:
            raise BudgetExceeded(f'step budget of {self.step_budget} node executions exceeded')

    def _run_graph(self, graph, active, bindings, feeds):
        env = {}
        for node in graph.topo_order():
            if node.kind in ops.BINDING_KINDS:
                env[Ref(node.id)] = bindings[node.id]
                continue
            try:
                if node.block is not None:
                    outputs = self._run_block(node, active, env, feeds)
                else:
                    outputs = self._run_op(node, active, env, feeds)
            except PforvecError as e:
                if e.node_id is None:
                    e.node_id = node.id
                raise
            for port, values in enumerate(outputs):
                env[Ref(node.id, port)] = values
        return env

    def _run_op(self, node, active, env, feeds):
        self._count(len(active))
        outputs = [{} for _ in range(node.output_arity)]
        for lane in active:
            values = [env[r][lane] for r in node.inputs]
            for port, value in enumerate(self._execute(node, values, feeds)):
                outputs[port][lane] = value
        return outputs

    def _execute(self, node, values, feeds):
        kind, attrs = node.kind, node.attrs
        if kind == 'placeholder':
            if attrs['name'] not in feeds:
                raise MissingFeed(f'no feed for placeholder {attrs["name"]!r}')
            value = feeds[attrs['name']]
            return [value if isinstance(value, TensorValue) else T.tensor(value, attrs['dtype'])]
        if kind == 'read_variable':
            return [self.store.read(attrs['name'], node.id)]
        if kind == 'assign':
            self.store.write(attrs['name'], values[0], node.id)
            return []
        if kind == 'assign_add':
            self.store.add(attrs['name'], values[0], node.id)
            return []
        if kind == 'random_uniform':
            lead = (int(values[0].item()),) if values else ()
            return [rng_draw(self.rng, lead + tuple(attrs['shape']))]
        return ops.run_kernel(kind, values, attrs)

    def _bindings(self, sub, lanes, capture_values, carried=None, loop_var=None):
        bindings = {}
        for node in sub.nodes.values():
            if node.kind == 'capture':
                values = capture_values[node.attrs['index']]
                bindings[node.id] = {lane: values[lane] for lane in lanes}
            elif node.kind == 'carried':
                k = node.attrs['index']
                bindings[node.id] = {lane: carried[lane][k] for lane in lanes}
            elif node.kind == 'loop_var':
                bindings[node.id] = loop_var
        return bindings

    def _run_block(self, node, active, env, feeds):
        self._count(len(active))
        block = node.block
        offset = block.capture_offset()
        capture_values = {k: env[r] for k, r in enumerate(node.inputs[offset:])}
        log.debug(f'Interpreter - entering {node.kind} block {node.id} with {len(active)} active lanes')
        if node.kind == BLOCK_KINDS.COND:
            return self._run_cond(node, active, env[node.inputs[0]], capture_values, feeds)
        if node.kind == BLOCK_KINDS.WHILE:
            inits = [env[r] for r in node.inputs[:offset]]
            return self._run_while(node, active, inits, capture_values, feeds)
        counts = {lane: int(env[node.inputs[0]][lane].item()) for lane in active}
        return self._run_parfor_lanes(node, active, counts, capture_values, feeds)

    def _run_cond(self, node, active, pred, capture_values, feeds):
        outputs = [{} for _ in range(node.output_arity)]
        taken, left = active.partition({lane: _truth(pred[lane]) for lane in active})
        for role, lanes in (('then', taken), ('else', left)):
            if not lanes:
                continue
            sub = node.block.subgraphs[role]
            sub_env = self._run_graph(sub, lanes, self._bindings(sub, lanes, capture_values), feeds)
            for port, ref in enumerate(sub.outputs):
                for lane in lanes:
                    outputs[port][lane] = sub_env[ref][lane]
        return outputs

    def _run_while(self, node, active, inits, capture_values, feeds):
        cond = node.block.subgraphs['cond']
        body = node.block.subgraphs['body']
        state = {lane: [values[lane] for values in inits] for lane in active}
        current = active
        while current:
            cond_env = self._run_graph(cond, current, self._bindings(cond, current, capture_values, state), feeds)
            flags = cond_env[cond.outputs[0]]
            current, _ = current.partition({lane: _truth(flags[lane]) for lane in current})
            if not current:
                break
            body_env = self._run_graph(body, current, self._bindings(body, current, capture_values, state), feeds)
            for lane in current:
                updated = [body_env[ref][lane] for ref in body.outputs]
                for old, new in zip(state[lane], updated):
                    if old.shape != new.shape:
                        raise ShapeVariance(
                            f'while body changed a carried shape from {list(old.shape)} to {list(new.shape)}')
                state[lane] = updated
        return [{lane: state[lane][k] for lane in active} for k in range(node.output_arity)]

    def _run_parfor_lanes(self, node, active, counts, capture_values, feeds):
        body = node.block.subgraphs['body']
        inner = ActiveSet(tuple(lane + (j,) for lane in active for j in range(counts[lane])))
        loop_var = {lane: T.scalar(lane[-1], DTYPE.I64) for lane in inner}
        inner_captures = {k: {lane: values[lane[:-1]] for lane in inner} for k, values in capture_values.items()}
        bindings = self._bindings(body, inner, inner_captures, loop_var=loop_var)
        sub_env = self._run_graph(body, inner, bindings, feeds) if inner else {}
        outputs = []
        for port, ref in enumerate(body.outputs):
            spec = body.spec(ref)
            stacked = {}
            for lane in active:
                rows = [sub_env[ref][lane + (j,)] for j in range(counts[lane])]
                stacked[lane] = _stack_rows(rows, spec)
            outputs.append(stacked)
        return outputs


def _stack_rows(rows, spec):
    if not rows:
        if not spec.static:
            raise ShapeVariance('cannot stack zero iterations of an output without a static shape')
        return T.zeros((0,) + tuple(spec.shape), spec.dtype)
    first = rows[0].shape
    for row in rows[1:]:
        if row.shape != first:
            raise ShapeVariance(f'iterations produced shapes {list(first)} and {list(row.shape)}')
    return T.stack(rows, 0)


def execute(graph, feeds=None, store=None, rng=None, step_budget=None):
    """
    Run graph in topological order and return its output values. store and rng
    are mutated in execution order.
    """
    if store is None:
        store = VariableStore.from_graph(graph)
    return Interpreter(store, rng, step_budget).run(graph, feeds)


def execute_parfor_simd(node, n, captures, store=None, rng=None, step_budget=None):
    """Stacked outputs of a PARFOR block run for n iterations under SIMD semantics."""
    return Interpreter(store, rng, step_budget).run_parfor(node, n, captures)
