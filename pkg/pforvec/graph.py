# -*- coding:utf-8 -*-
"""
The dataflow IR.

A Graph owns id-keyed Nodes. Control flow is structured: a COND, WHILE or PARFOR
block is one opaque node in its parent whose Block holds the owned subgraphs.
Subgraphs see outer tensors only through capture nodes; building a node inside a
subgraph with an input from an enclosing graph captures it automatically.

Node ids come from one counter shared by the root graph and all its subgraphs,
so an id names a node unambiguously across the whole tree.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import heapq
import itertools
import logging

# Installed packages (via pip)
import numpy as np

# Internal project dependencies
from . import ops
from .exceptions import (
    ArityMismatch,
    BadAttr,
    CycleDetected,
    DTypeMismatch,
    GraphError,
    IncompatibleShapes,
    NonScalarCondition,
    PforvecError,
    UnknownInput,
    UnknownKind,
)
from .ops import BLOCK_KINDS, TensorSpec
from .tensor import DTYPE, TensorValue, tensor


log = logging.getLogger(__name__)

BLOCK_ROLES = {
    BLOCK_KINDS.COND: ('then', 'else'),
    BLOCK_KINDS.WHILE: ('cond', 'body'),
    BLOCK_KINDS.PARFOR: ('body',),
}


@dataclass(frozen=True)
class Ref:
    """One output port of one node."""
    node: int
    port: int = 0

    def __repr__(self):
        return f'%{self.node}:{self.port}'


@dataclass(frozen=True)
class OpSignature:
    kind: str
    attrs: dict = field(default_factory=dict)


class BlockScope:
    """
    Ordered, deduplicated outer tensors captured by one block, shared by all of
    its subgraphs.
    """

    def __init__(self):
        self.refs = []
        self.index = {}
        self.graph = None
        self.node_id = None

    def add(self, ref):
        if ref not in self.index:
            self.index[ref] = len(self.refs)
            self.refs.append(ref)
            if self.node_id is not None:
                self.graph.sync_block_inputs(self.node_id)
        return self.index[ref]


@dataclass
class Block:
    kind: str
    subgraphs: dict
    scope: BlockScope
    n_carried: int = 0

    @property
    def captures(self):
        return tuple(self.scope.refs)

    def capture_offset(self):
        if self.kind == BLOCK_KINDS.WHILE:
            return self.n_carried
        return 1


@dataclass
class Node:
    id: int
    sig: OpSignature
    inputs: tuple
    control_deps: frozenset
    specs: tuple
    block: Block = None

    @property
    def kind(self):
        return self.sig.kind

    @property
    def attrs(self):
        return self.sig.attrs

    @property
    def output_arity(self):
        return len(self.specs)

    @property
    def static_shapes(self):
        return tuple(s.shape for s in self.specs)

    def output(self, port=0):
        return Ref(self.id, port)

    def outputs(self):
        return tuple(Ref(self.id, k) for k in range(len(self.specs)))


def _as_refs(outputs):
    if outputs is None:
        return []
    if isinstance(outputs, Ref):
        return [outputs]
    return list(outputs)


def _unpack(node):
    refs = node.outputs()
    if len(refs) == 1:
        return refs[0]
    if not refs:
        return Ref(node.id, 0)
    return refs


class Graph(object):
    """
    A dataflow graph, or one subgraph of a control-flow block.
    """

    def __init__(self, parent=None, scope=None, role='main', block_kind=None):
        self.parent = parent
        self.scope = scope
        self.role = role
        self.block_kind = block_kind
        self.nodes = {}
        self.outputs = []
        self._captures = {}
        if parent is None:
            self.root = self
            self._ids = itertools.count()
            self._owner = {}
            self._variables = {}
            self.last_id = -1
        else:
            self.root = parent.root

    def __repr__(self):
        return f'<Graph {self.role}: {len(self.nodes)} nodes>'

    # Lookup

    @property
    def variables(self):
        return self.root._variables

    def owner(self, node_id):
        return self.root._owner.get(node_id)

    def node(self, node_id):
        if isinstance(node_id, Ref):
            node_id = node_id.node
        owner = self.owner(node_id)
        if owner is None:
            raise UnknownInput(f'no node with id {node_id}')
        return owner.nodes[node_id]

    def spec(self, ref):
        node = self.node(ref)
        if not 0 <= ref.port < node.output_arity:
            raise UnknownInput(f'node {ref.node} has no output port {ref.port}')
        return node.specs[ref.port]

    def contains(self, graph):
        while graph is not None:
            if graph is self:
                return True
            graph = graph.parent
        return False

    def inside_parfor(self):
        graph = self
        while graph is not None:
            if graph.block_kind == BLOCK_KINDS.PARFOR:
                return True
            graph = graph.parent
        return False

    def all_graphs(self):
        yield self
        for node in self.nodes.values():
            if node.block is not None:
                for sub in node.block.subgraphs.values():
                    yield from sub.all_graphs()

    def users(self, node_id):
        found = [n.id for n in self.nodes.values() if node_id in n.control_deps
                 or any(r.node == node_id for r in n.inputs)]
        return found

    # Building

    def _new_id(self):
        node_id = next(self.root._ids)
        self.root.last_id = node_id
        return node_id

    def _register(self, node):
        self.nodes[node.id] = node
        self.root._owner[node.id] = self
        return node

    def localize(self, ref):
        """
        Return a ref usable by nodes of this graph, capturing ref through every
        enclosing block when it belongs to an ancestor graph.
        """
        if not isinstance(ref, Ref):
            raise UnknownInput(f'expected a tensor ref, got {ref!r}')
        owner = self.owner(ref.node)
        if owner is None:
            raise UnknownInput(f'no node with id {ref.node}')
        if owner is self:
            self.spec(ref)
            return ref
        if self.parent is None:
            raise UnknownInput(f'node {ref.node} is not visible from this graph')
        return self.capture(self.parent.localize(ref))

    def capture(self, outer):
        """Local capture node for a ref of the parent graph."""
        if self.scope is None:
            raise GraphError('only block subgraphs can capture')
        k = self.scope.add(outer)
        if k not in self._captures:
            node = self._bind('capture', {'index': k}, self.parent.spec(outer))
            self._captures[k] = node.id
        return Ref(self._captures[k])

    def _bind(self, kind, attrs, spec):
        node = Node(self._new_id(), OpSignature(kind, attrs), (), frozenset(), (spec,))
        return self._register(node)

    def _control_ids(self, control_deps):
        ids = set()
        for dep in control_deps or ():
            dep = dep.node if isinstance(dep, Ref) else int(dep)
            if dep not in self.nodes:
                raise UnknownInput(f'control dependency {dep} is not a node of this graph')
            ids.add(dep)
        return frozenset(ids)

    def add_node(self, sig, inputs=(), control_deps=()):
        """
        Append a node; inputs resolve (capturing outer refs) and attrs are
        validated and shapes inferred. Returns the new node id.
        """
        if sig.kind in BLOCK_KINDS or sig.kind in ops.BINDING_KINDS:
            raise BadAttr(f'{sig.kind} nodes are created by the block builders')
        inputs = tuple(self.localize(r) for r in inputs)
        ctrl = self._control_ids(control_deps)
        attrs, specs = ops.infer(sig.kind, [self.spec(r) for r in inputs], dict(sig.attrs), self)
        node = Node(self._new_id(), OpSignature(sig.kind, attrs), inputs, ctrl, tuple(specs))
        self._register(node)
        return node.id

    def op(self, kind, *inputs, ctrl=(), **attrs):
        node_id = self.add_node(OpSignature(kind, attrs), inputs, ctrl)
        return _unpack(self.nodes[node_id])

    def constant(self, value, dtype=None):
        if not isinstance(value, TensorValue):
            value = tensor(value, dtype)
        return self.op('constant', value=value)

    def placeholder(self, name, shape, dtype=DTYPE.F64):
        return self.op('placeholder', name=name, shape=list(shape), dtype=dtype)

    def variable(self, name, initial):
        if not isinstance(initial, TensorValue):
            initial = tensor(initial)
        if name in self.variables:
            raise BadAttr(f'variable {name!r} already declared')
        self.variables[name] = initial
        return name

    def set_outputs(self, outputs):
        self.outputs = [self.localize(r) for r in _as_refs(outputs)]
        return self.outputs

    def add_control_dep(self, node_id, dep):
        node = self.nodes[node_id]
        node.control_deps = node.control_deps | self._control_ids([dep])

    # Blocks

    def build_block(self, kind, builders, captures=(), pred=None, inits=(), iters=None, control_deps=()):
        """
        Build a COND, WHILE or PARFOR block node. builders maps subgraph role to a
        callable receiving the subgraph followed by its parameters:
        COND (then/else): the captures; WHILE (cond/body): carried values, then
        captures; PARFOR (body): the loop variable, then captures.
        Returns the block node id.
        """
        if kind not in BLOCK_ROLES:
            raise UnknownKind(f'unknown block kind {kind!r}')
        scope = BlockScope()
        for ref in captures:
            scope.add(self.localize(ref))
        explicit = list(scope.refs)
        head = []
        carried_specs = []
        if kind == BLOCK_KINDS.COND:
            head = [self.localize(pred)]
        elif kind == BLOCK_KINDS.WHILE:
            head = [self.localize(r) for r in inits]
            carried_specs = [self.spec(r) for r in head]
        else:
            if not isinstance(iters, Ref):
                iters = self.constant(int(iters), DTYPE.I64)
            head = [self.localize(iters)]
        _check_head(kind, [self.spec(r) for r in head])

        subgraphs = {}
        for role in BLOCK_ROLES[kind]:
            sub = Graph(parent=self, scope=scope, role=role, block_kind=kind)
            params = []
            if kind == BLOCK_KINDS.WHILE:
                params = [Ref(sub._bind('carried', {'index': k}, s).id) for k, s in enumerate(carried_specs)]
            elif kind == BLOCK_KINDS.PARFOR:
                params = [Ref(sub._bind('loop_var', {}, TensorSpec(DTYPE.I64, ())).id)]
            params += [sub.capture(ref) for ref in explicit]
            sub.set_outputs(builders[role](sub, *params))
            subgraphs[role] = sub

        block = Block(kind, subgraphs, scope, len(carried_specs))
        specs = _block_specs(block, [self.spec(r) for r in head], self)
        node = Node(self._new_id(), OpSignature(kind, {}), tuple(head) + tuple(scope.refs),
                    self._control_ids(control_deps), tuple(specs), block)
        self._register(node)
        scope.graph = self
        scope.node_id = node.id
        return node.id

    def sync_block_inputs(self, node_id):
        node = self.nodes[node_id]
        offset = node.block.capture_offset()
        node.inputs = tuple(node.inputs[:offset]) + tuple(node.block.scope.refs)

    def cond(self, pred, then_fn, else_fn, captures=(), ctrl=()):
        node_id = self.build_block(BLOCK_KINDS.COND, {'then': then_fn, 'else': else_fn},
                                   captures=captures, pred=pred, control_deps=ctrl)
        return self.nodes[node_id].outputs()

    def while_loop(self, cond_fn, body_fn, inits, captures=(), ctrl=()):
        node_id = self.build_block(BLOCK_KINDS.WHILE, {'cond': cond_fn, 'body': body_fn},
                                   captures=captures, inits=inits, control_deps=ctrl)
        return self.nodes[node_id].outputs()

    def parfor(self, iters, body_fn, captures=(), ctrl=()):
        node_id = self.build_block(BLOCK_KINDS.PARFOR, {'body': body_fn},
                                   captures=captures, iters=iters, control_deps=ctrl)
        return self.nodes[node_id].outputs()

    # Rewriting

    def replace_all_uses(self, old, new):
        for node in self.nodes.values():
            if old in node.inputs:
                node.inputs = tuple(new if r == old else r for r in node.inputs)
                if node.block is not None:
                    node.block.scope.refs = [new if r == old else r for r in node.block.scope.refs]
                    node.block.scope.index = {r: k for k, r in enumerate(node.block.scope.refs)}
        self.outputs = [new if r == old else r for r in self.outputs]

    def retarget_control_deps(self, old_id, new_ids):
        for node in self.nodes.values():
            if old_id in node.control_deps:
                node.control_deps = (node.control_deps - {old_id}) | frozenset(new_ids)

    def remove_node(self, node_id):
        users = self.users(node_id)
        if users or any(r.node == node_id for r in self.outputs):
            raise GraphError(f'node {node_id} still has users {users}')
        node = self.nodes.pop(node_id)
        owners = self.root._owner
        owners.pop(node_id, None)
        if node.block is not None:
            for sub in node.block.subgraphs.values():
                for g in sub.all_graphs():
                    for nid in g.nodes:
                        owners.pop(nid, None)

    # Traversal and checking

    def topo_order(self):
        """
        Nodes ordered after all their data and control predecessors; ties go to the
        lowest id. Raises CycleDetected naming the nodes left unordered.
        """
        preds = {}
        succs = {nid: [] for nid in self.nodes}
        for nid, node in self.nodes.items():
            deps = {r.node for r in node.inputs if r.node in self.nodes} | {d for d in node.control_deps if d in self.nodes}
            preds[nid] = len(deps)
            for d in deps:
                succs[d].append(nid)
        ready = [nid for nid, count in preds.items() if count == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            nid = heapq.heappop(ready)
            order.append(self.nodes[nid])
            for s in succs[nid]:
                preds[s] -= 1
                if preds[s] == 0:
                    heapq.heappush(ready, s)
        if len(order) != len(self.nodes):
            left = set(self.nodes) - {n.id for n in order}
            raise CycleDetected(f'cycle among nodes {sorted(left)}', nodes=left)
        return order

    def validate(self):
        """
        Check port resolution, acyclicity, attrs, shapes and block invariants of
        this graph and every nested subgraph. Returns the list of violations.
        """
        errors = []
        self._validate_into(errors)
        return errors

    def _validate_into(self, errors):
        resolvable = set()
        for node in self.nodes.values():
            ok = True
            for r in node.inputs:
                if r.node not in self.nodes or not 0 <= r.port < self.nodes[r.node].output_arity:
                    errors.append(UnknownInput(f'input {r!r} does not resolve in this graph', node_id=node.id))
                    ok = False
            for d in node.control_deps:
                if d not in self.nodes:
                    errors.append(UnknownInput(f'control dependency {d} does not resolve', node_id=node.id))
            if not ops.is_known_kind(node.kind):
                errors.append(UnknownKind(f'unknown op kind {node.kind!r}', node_id=node.id))
                ok = False
            if ok:
                resolvable.add(node.id)
        try:
            order = self.topo_order()
        except CycleDetected as e:
            errors.append(e)
            order = [self.nodes[nid] for nid in sorted(self.nodes)]
        for node in order:
            if node.id not in resolvable:
                continue
            try:
                self._reinfer(node)
            except PforvecError as e:
                if e.node_id is None:
                    e.node_id = node.id
                errors.append(e)
            if node.block is not None:
                for sub in node.block.subgraphs.values():
                    sub._validate_into(errors)
        for r in self.outputs:
            if r.node not in self.nodes or not 0 <= r.port < self.nodes[r.node].output_arity:
                errors.append(UnknownInput(f'graph output {r!r} does not resolve'))

    def _reinfer(self, node):
        """Recompute the specs of node from its inputs; binding nodes keep theirs."""
        if node.kind in ops.BINDING_KINDS:
            return node.specs
        input_specs = [self.spec(r) for r in node.inputs]
        if node.block is None:
            attrs, specs = ops.infer(node.kind, input_specs, dict(node.attrs), self)
            node.sig = OpSignature(node.kind, attrs)
        else:
            block = node.block
            offset = block.capture_offset()
            self._bind_block(node, input_specs)
            for sub in block.subgraphs.values():
                sub.refresh()
            _check_head(node.kind, input_specs[:offset])
            specs = _block_specs(block, input_specs[:offset], self)
        node.specs = tuple(specs)
        return node.specs

    def _bind_block(self, node, input_specs):
        block = node.block
        offset = block.capture_offset()
        for sub in block.subgraphs.values():
            for b in sub.nodes.values():
                if b.kind == 'capture' and b.attrs['index'] + offset < len(input_specs):
                    b.specs = (input_specs[offset + b.attrs['index']],)
                elif b.kind == 'carried' and b.attrs['index'] < offset:
                    b.specs = (input_specs[b.attrs['index']],)
                elif b.kind == 'loop_var':
                    b.specs = (TensorSpec(DTYPE.I64, ()),)

    def refresh(self):
        """
        Best-effort re-inference of every spec in topological order; nodes that
        fail keep unknown specs for validate() to report.
        """
        try:
            order = self.topo_order()
        except CycleDetected:
            return
        for node in order:
            try:
                self._reinfer(node)
            except PforvecError as e:
                log.debug(f'Graph - cannot infer node {node.id}, error: {format(str(e))}')


def _check_head(kind, head_specs):
    if kind == BLOCK_KINDS.COND:
        spec = head_specs[0]
        if spec.dtype != DTYPE.BOOL or spec.shape not in (None, ()):
            raise NonScalarCondition(f'cond predicate must be a BOOL scalar, got {spec.describe()}')
    elif kind == BLOCK_KINDS.PARFOR:
        spec = head_specs[0]
        if spec.dtype != DTYPE.I64 or spec.shape not in (None, ()):
            raise NonScalarCondition(f'parfor iters must be an I64 scalar, got {spec.describe()}')


def _merge_shapes(a, b):
    if a is None or b is None or len(a) != len(b):
        return None
    return tuple(x if x == y else None for x, y in zip(a, b))


def _block_specs(block, head_specs, graph):
    subs = block.subgraphs
    if block.kind == BLOCK_KINDS.COND:
        then_specs = [subs['then'].spec(r) for r in subs['then'].outputs]
        else_specs = [subs['else'].spec(r) for r in subs['else'].outputs]
        if len(then_specs) != len(else_specs):
            raise ArityMismatch(f'cond branches return {len(then_specs)} and {len(else_specs)} values')
        specs = []
        for a, b in zip(then_specs, else_specs):
            if a.dtype != b.dtype:
                raise DTypeMismatch(f'cond branches return {a.dtype} and {b.dtype}')
            specs.append(TensorSpec(a.dtype, _merge_shapes(a.shape, b.shape)))
        return specs
    if block.kind == BLOCK_KINDS.WHILE:
        cond = [subs['cond'].spec(r) for r in subs['cond'].outputs]
        if len(cond) != 1 or cond[0].dtype != DTYPE.BOOL or cond[0].shape not in (None, ()):
            raise NonScalarCondition('while condition must return one BOOL scalar')
        body = [subs['body'].spec(r) for r in subs['body'].outputs]
        if len(body) != len(head_specs):
            raise ArityMismatch(f'while body returns {len(body)} values for {len(head_specs)} carried')
        specs = []
        for init, out in zip(head_specs, body):
            if init.dtype != out.dtype:
                raise DTypeMismatch(f'while body changes a carried dtype from {init.dtype} to {out.dtype}')
            if init.shape is not None and out.shape is not None:
                same = len(init.shape) == len(out.shape) and all(
                    a is None or b is None or a == b for a, b in zip(init.shape, out.shape))
                if not same:
                    raise IncompatibleShapes(
                        f'while body changes a carried shape from {init.describe()} to {out.describe()}')
            specs.append(TensorSpec(init.dtype, init.shape))
        return specs
    iters = head_specs[0].value
    n = None if iters is None else int(iters.item())
    specs = []
    for r in subs['body'].outputs:
        s = subs['body'].spec(r)
        specs.append(TensorSpec(s.dtype, None if s.shape is None else (n,) + s.shape))
    return specs


def static_value(graph, ref):
    """Build-time constant value of ref as a numpy array, or None."""
    value = graph.spec(ref).value
    return None if value is None else np.asarray(value.array)
