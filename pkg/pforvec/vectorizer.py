# -*- coding:utf-8 -*-
"""
Greedy PARFOR vectorization.

The body of a PARFOR block is walked in topological order and every node is
dispatched to a converter that emits equivalent batched nodes into the parent
graph. A converted tensor is wrapped as stacked (leading axis = iterations) or
unstacked (loop invariant, never tiled until some consumer needs it stacked).
COND and WHILE blocks are converted recursively over the subset of active
iterations; anything without a converter runs as a sequential loop.
"""
# Python Standard Libraries
from collections import Counter
from dataclasses import dataclass, field, replace
import logging

# Installed packages (via pip)
from model_utils import Choices

# Internal project dependencies
from . import ops
from . import tensor as T
from .exceptions import PforvecError, StatefulNotSupported, VectorizeError
from .graph import OpSignature, Ref
from .ops import BLOCK_KINDS, STATEFUL_KINDS
from .tensor import DTYPE


log = logging.getLogger(__name__)

PATHS = Choices('invariant', 'fast', 'generic', 'fallback', 'stateful', 'control')
STATEFUL_POLICIES = Choices('error', 'fallback')


@dataclass(frozen=True)
class WrappedValue:
    ref: Ref
    stacked: bool


def stacked(ref):
    return WrappedValue(ref, True)


def unstacked(ref):
    return WrappedValue(ref, False)


@dataclass
class VectorizePolicy:
    """
    stateful: what to do with assign of a loop-variant value ('error' or 'fallback').
    force_fallback: run every loop-variant node as a sequential loop.
    fast_paths: when off, mixed stacked/unstacked inputs are tiled and batched.
    """
    stateful: str = STATEFUL_POLICIES.error
    force_fallback: bool = False
    fast_paths: bool = True


@dataclass(frozen=True)
class DiagnosticEntry:
    node_id: int
    kind: str
    path: str
    reason: str = ''


class Diagnostics(object):
    """Which conversion path every body node took, and why."""

    def __init__(self):
        self.entries = []

    def record(self, node, path, reason=''):
        self.entries.append(DiagnosticEntry(node.id, node.kind, path, reason))

    def counts(self):
        return Counter(entry.path for entry in self.entries)

    def fallbacks(self):
        return [entry for entry in self.entries if entry.path == PATHS.fallback]

    def to_text(self):
        lines = []
        for entry in self.entries:
            line = f'node {entry.node_id} {entry.kind}: {entry.path}'
            if entry.reason:
                line += f' ({entry.reason})'
            lines.append(line)
        return '\n'.join(lines)


class NeedsFallback(VectorizeError):
    """Raised by a converter that cannot handle its inputs."""


class ConverterRegistry(object):
    """Converters keyed by op kind; a converter maps (ctx, node, wrapped inputs) to wrapped outputs."""

    def __init__(self, converters=None):
        self._converters = dict(converters or {})

    def register(self, *kinds):
        def decorator(fn):
            for kind in kinds:
                self._converters[kind] = fn
            return fn
        return decorator

    def get(self, kind):
        return self._converters.get(kind)

    def kinds(self):
        return sorted(self._converters)

    def copy(self):
        return ConverterRegistry(self._converters)

    def __contains__(self, kind):
        return kind in self._converters


DEFAULT_REGISTRY = ConverterRegistry()


@dataclass
class ConversionContext:
    """
    Where converted nodes go and which iterations they stand for: iters is the
    (possibly dynamic) number of active rows, lvr the stacked iteration ids of
    those rows.
    """
    graph: object
    iters: Ref
    static_iters: int = None
    lvr: WrappedValue = None
    lvr_identity: bool = False
    registry: ConverterRegistry = None
    policy: VectorizePolicy = field(default_factory=VectorizePolicy)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    ctrl: tuple = ()

    def derive(self, **changes):
        return replace(self, **changes)

    def here(self):
        return tuple(d for d in self.ctrl if d in self.graph.nodes)

    def emit_node(self, kind, inputs, attrs):
        node_id = self.graph.add_node(OpSignature(kind, dict(attrs)), inputs, self.here())
        return list(self.graph.nodes[node_id].outputs())

    def emit(self, kind, *inputs, **attrs):
        return self.emit_node(kind, inputs, attrs)[0]

    def constant(self, value, dtype=None):
        return self.graph.constant(value, dtype)

    def spec(self, ref):
        return self.graph.spec(ref)

    def materialize(self, w):
        """Stacked form of w; unstacked values are tiled to the iteration count."""
        if w.stacked:
            return w.ref
        return self.emit('tile_leading', w.ref, self.iters)

    def leading(self, factor, tail):
        """
        Leading entry for a reshape to [iters * factor] + tail; -1 unless the tail
        is empty, where the count must be static.
        """
        if 0 not in tail:
            return -1
        if self.static_iters is None:
            raise NeedsFallback('reshape of empty rows needs a static iteration count')
        return self.static_iters * factor


def _block_bindings(sub, captures, carried=()):
    bindings = {}
    for node in sub.nodes.values():
        if node.kind == 'capture':
            bindings[node.id] = captures[node.attrs['index']]
        elif node.kind == 'carried':
            bindings[node.id] = carried[node.attrs['index']]
    return bindings


def convert_graph(sub, ctx, bindings):
    """
    Convert every node of a body subgraph in topological order and return the
    wrapped values of its outputs. bindings maps binding node ids to wrapped
    values. Control deps of a body node are mirrored onto everything emitted for it.
    """
    env = {}
    emitted = {}
    root = ctx.graph.root
    for node in sub.topo_order():
        if node.kind in ops.BINDING_KINDS:
            env[Ref(node.id)] = bindings[node.id]
            continue
        inputs = [env[r] for r in node.inputs]
        deps = tuple(i for d in sorted(node.control_deps) for i in emitted.get(d, ()))
        start = root.last_id
        outputs = convert_node(node, inputs, ctx.derive(ctrl=ctx.ctrl + deps))
        emitted[node.id] = [i for i in range(start + 1, root.last_id + 1) if i in ctx.graph.nodes]
        for port, w in enumerate(outputs):
            env[Ref(node.id, port)] = w
    return [env[r] for r in sub.outputs]


def convert_node(node, inputs, ctx):
    """Dispatch one body node to its converter."""
    try:
        if node.block is not None:
            if node.kind == BLOCK_KINDS.COND:
                return convert_cond(node, inputs, ctx)
            if node.kind == BLOCK_KINDS.WHILE:
                return convert_while(node, inputs, ctx)
            return convert_parfor(node, inputs, ctx)
        if node.kind in STATEFUL_KINDS:
            return convert_stateful(node, inputs, ctx)
        if not any(w.stacked for w in inputs):
            ctx.diagnostics.record(node, PATHS.invariant)
            return [unstacked(r) for r in ctx.emit_node(node.kind, [w.ref for w in inputs], node.attrs)]
        if ctx.policy.force_fallback:
            return fallback_loop(node, inputs, ctx, 'forced by policy')
        converter = ctx.registry.get(node.kind)
        if converter is None:
            return fallback_loop(node, inputs, ctx, f'no converter for {node.kind}')
        try:
            return converter(ctx, node, inputs)
        except NeedsFallback as e:
            return fallback_loop(node, inputs, ctx, e.message)
    except VectorizeError as e:
        if e.node_id is None:
            e.node_id = node.id
        raise
    except PforvecError as e:
        raise VectorizeError(f'converting {node.kind} failed, error: {format(str(e))}', node_id=node.id)


def fallback_loop(node, inputs, ctx, reason):
    """
    Sequential WHILE over j in [0, iters) running the original node on row j of
    every stacked input and writing row j of each preallocated accumulator.
    """
    ctx.diagnostics.record(node, PATHS.fallback, reason)
    log.warning(f'Vectorizer - node {node.id} ({node.kind}) runs as a sequential loop: {reason}')
    if node.block is not None:
        raise VectorizeError(f'no sequential fallback for {node.kind} blocks')
    for spec in node.specs:
        if not spec.static:
            raise VectorizeError(f'sequential fallback needs static output shapes, got {spec.describe()}')
    accumulators = [ctx.emit('tile_leading', ctx.constant(T.zeros(s.shape, s.dtype)), ctx.iters)
                    for s in node.specs]
    start = ctx.constant(0, DTYPE.I64)

    def cond_fn(sub, j, *accs):
        return sub.op('less', j, ctx.iters)

    def body_fn(sub, j, *accs):
        args = [sub.op('gather_rows', w.ref, j) if w.stacked else w.ref for w in inputs]
        node_id = sub.add_node(OpSignature(node.kind, dict(node.attrs)), args)
        outs = sub.nodes[node_id].outputs()
        updated = [sub.op('update_rows', acc, j, out) for acc, out in zip(accs, outs)]
        return [sub.op('add', j, sub.constant(1, DTYPE.I64))] + updated

    results = ctx.graph.while_loop(cond_fn, body_fn, [start] + accumulators, ctrl=ctx.here())
    return [stacked(r) for r in results[1:]]


def convert_stateful(node, inputs, ctx):
    """
    read_variable runs once and is loop invariant; assign_add applies the sum of
    all updates once; assign needs a loop-invariant value; random_uniform draws all
    rows at once.
    """
    kind, name = node.kind, node.attrs.get('name')
    if kind == 'read_variable':
        ctx.diagnostics.record(node, PATHS.stateful, 'read once')
        return [unstacked(ctx.emit('read_variable', name=name))]
    if kind == 'assign_add':
        ctx.diagnostics.record(node, PATHS.stateful, 'reduced update')
        total = ctx.emit('reduce_sum', ctx.materialize(inputs[0]), axes=[0])
        ctx.emit_node('assign_add', [total], {'name': name})
        return []
    if kind == 'assign':
        value = inputs[0]
        if value.stacked:
            if ctx.policy.stateful == STATEFUL_POLICIES.fallback:
                return fallback_loop(node, inputs, ctx, 'assign of a loop-variant value')
            raise StatefulNotSupported(f'assign to {name!r} of a loop-variant value', node_id=node.id)
        ctx.diagnostics.record(node, PATHS.stateful, 'invariant assign')
        if ctx.static_iters is not None:
            if ctx.static_iters > 0:
                ctx.emit_node('assign', [value.ref], {'name': name})
            return []

        def then_fn(sub):
            sub.add_node(OpSignature('assign', {'name': name}), [value.ref])
            return []

        guard = ctx.emit('less', ctx.constant(0, DTYPE.I64), ctx.iters)
        ctx.graph.cond(guard, then_fn, lambda sub: [], ctrl=ctx.here())
        return []
    if inputs:
        return fallback_loop(node, inputs, ctx, 'random draw with a leading count')
    ctx.diagnostics.record(node, PATHS.stateful, 'one draw with a leading iteration axis')
    return [stacked(ctx.emit('random_uniform', ctx.iters, shape=list(node.attrs['shape'])))]


def convert_cond(node, inputs, ctx):
    """
    A loop-invariant predicate keeps an ordinary COND. A stacked predicate splits
    the active rows into the then and else index sets, runs each converted branch
    on its rows behind a non-empty guard and stitches the results back together.
    """
    pred, captures = inputs[0], inputs[1:]
    block = node.block
    if not pred.stacked:
        ctx.diagnostics.record(node, PATHS.control, 'invariant predicate')

        invariant = not any(w.stacked for w in captures) and not _draws_random(block)

        def branch(role):
            def build(sub):
                sub_ctx = ctx.derive(graph=sub, ctrl=())
                outs = convert_graph(block.subgraphs[role], sub_ctx, _block_bindings(block.subgraphs[role], captures))
                if invariant:
                    return [w.ref for w in outs]
                return [sub_ctx.materialize(w) for w in outs]
            return build

        results = ctx.graph.cond(pred.ref, branch('then'), branch('else'), ctrl=ctx.here())
        return [WrappedValue(r, not invariant) for r in results]

    ctx.diagnostics.record(node, PATHS.control, 'stacked predicate')
    for spec in node.specs:
        if not spec.static:
            raise VectorizeError(f'cond outputs need static shapes, got {spec.describe()}')
    then_idx = ctx.emit('nonzero', pred.ref)
    else_idx = ctx.emit('nonzero', ctx.emit('logical_not', pred.ref))
    parts = []
    for role, idx in (('then', then_idx), ('else', else_idx)):
        count = ctx.emit('dim_size', idx)
        rows = [stacked(ctx.emit('gather_rows', w.ref, idx)) if w.stacked else w for w in captures]
        lvr = stacked(ctx.emit('gather_rows', ctx.lvr.ref, idx))
        guard = ctx.emit('less', ctx.constant(0, DTYPE.I64), count)

        def then_fn(sub, role=role, rows=rows, count=count, lvr=lvr):
            sub_ctx = ctx.derive(graph=sub, iters=count, static_iters=None, lvr=lvr, lvr_identity=False, ctrl=())
            branch = block.subgraphs[role]
            outs = convert_graph(branch, sub_ctx, _block_bindings(branch, rows))
            return [sub_ctx.materialize(w) for w in outs]

        def else_fn(sub):
            empty = sub.constant(0, DTYPE.I64)
            return [sub.op('tile_leading', sub.constant(T.zeros(s.shape, s.dtype)), empty) for s in node.specs]

        parts.append(ctx.graph.cond(guard, then_fn, else_fn, ctrl=ctx.here()))
    return [stacked(ctx.emit('scatter_rows', then_idx, else_idx, a, b, ctx.iters))
            for a, b in zip(parts[0], parts[1])]


def _draws_random(block):
    return any(n.kind == 'random_uniform' for sub in block.subgraphs.values()
               for g in sub.all_graphs() for n in g.nodes.values())


def _stacked_flags(sub, carried, captures):
    """
    Structural loop-variance of a subgraph's outputs: a value is variant when any
    input is, when it is the loop variable or when it is a random draw.
    """
    flags = {}
    for node in sub.topo_order():
        if node.kind == 'capture':
            flag = captures[node.attrs['index']]
        elif node.kind == 'carried':
            flag = carried[node.attrs['index']]
        elif node.kind in ('loop_var', 'random_uniform'):
            flag = True
        elif node.kind == 'read_variable':
            flag = False
        else:
            flag = any(flags[r.node] for r in node.inputs)
            if node.block is not None:
                flag = flag or _draws_random(node.block)
        flags[node.id] = flag
    return [flags[r.node] for r in sub.outputs]


def convert_while(node, inputs, ctx):
    """
    Loop-invariant condition: one WHILE iterating all rows together. Otherwise the
    converted loop carries (a BOOL mask of live rows, every carried value stacked
    over all rows, done), all of fixed shape: each trip runs the condition on the
    live rows, clears the mask where it failed and runs the body only on the
    survivors, writing their rows back.
    """
    block = node.block
    c = block.n_carried
    inits, captures = inputs[:c], inputs[c:]
    cond_sub, body_sub = block.subgraphs['cond'], block.subgraphs['body']
    capture_flags = [w.stacked for w in captures]
    variant = [w.stacked for w in inits]
    while True:
        outputs = _stacked_flags(body_sub, variant, capture_flags)
        merged = [a or b for a, b in zip(variant, outputs)]
        if merged == variant:
            break
        variant = merged
    cond_variant = _stacked_flags(cond_sub, variant, capture_flags)[0]

    if not cond_variant and ctx.policy.fast_paths:
        ctx.diagnostics.record(node, PATHS.control, 'invariant loop condition')
        start = [ctx.materialize(w) if variant[k] else w.ref for k, w in enumerate(inits)]

        def wrap(params):
            return [WrappedValue(p, variant[k]) for k, p in enumerate(params)]

        def cond_fn(sub, *params):
            sub_ctx = ctx.derive(graph=sub, ctrl=())
            out = convert_graph(cond_sub, sub_ctx, _block_bindings(cond_sub, captures, wrap(params)))[0]
            if out.stacked:
                raise VectorizeError('loop condition became loop-variant')
            return out.ref

        def body_fn(sub, *params):
            sub_ctx = ctx.derive(graph=sub, ctrl=())
            outs = convert_graph(body_sub, sub_ctx, _block_bindings(body_sub, captures, wrap(params)))
            result = []
            for k, w in enumerate(outs):
                if variant[k]:
                    result.append(sub_ctx.materialize(w))
                elif w.stacked:
                    raise VectorizeError(f'carried value {k} became loop-variant')
                else:
                    result.append(w.ref)
            return result

        results = ctx.graph.while_loop(cond_fn, body_fn, start, ctrl=ctx.here())
        return [WrappedValue(r, variant[k]) for k, r in enumerate(results)]

    ctx.diagnostics.record(node, PATHS.control, 'loop-variant condition')
    start = [ctx.materialize(w) for w in inits]
    live = ctx.emit('tile_leading', ctx.constant(True, DTYPE.BOOL), ctx.iters)
    done = ctx.emit('equal', ctx.iters, ctx.constant(0, DTYPE.I64))

    def cond_fn(sub, live, *rest):
        return sub.op('logical_not', rest[-1])

    def body_fn(sub, live, *rest):
        state = rest[:-1]
        active = sub.op('nonzero', live)
        count = sub.op('dim_size', active)
        rows = [stacked(sub.op('gather_rows', r, active)) for r in state]
        caps = [stacked(sub.op('gather_rows', w.ref, active)) if w.stacked else w for w in captures]
        cond_ctx = ctx.derive(graph=sub, iters=count, static_iters=None, lvr_identity=False, ctrl=(),
                              lvr=stacked(sub.op('gather_rows', ctx.lvr.ref, active)))
        flag = cond_ctx.materialize(convert_graph(cond_sub, cond_ctx, _block_bindings(cond_sub, caps, rows))[0])
        still = sub.op('update_rows', live, active, flag)
        survivors = sub.op('gather_rows', active, sub.op('nonzero', flag))
        left = sub.op('dim_size', survivors)
        finished = sub.op('equal', left, sub.constant(0, DTYPE.I64))
        guard = sub.op('less', sub.constant(0, DTYPE.I64), left)

        def then_fn(inner):
            inner_ctx = ctx.derive(graph=inner, iters=left, static_iters=None, lvr_identity=False, ctrl=(),
                                   lvr=stacked(inner.op('gather_rows', ctx.lvr.ref, survivors)))
            live_rows = [stacked(inner.op('gather_rows', r, survivors)) for r in state]
            live_caps = [stacked(inner.op('gather_rows', w.ref, survivors)) if w.stacked else w for w in captures]
            outs = convert_graph(body_sub, inner_ctx, _block_bindings(body_sub, live_caps, live_rows))
            return [inner.op('update_rows', r, survivors, inner_ctx.materialize(w)) for r, w in zip(state, outs)]

        updated = sub.cond(guard, then_fn, lambda inner: list(state))
        return [still] + list(updated) + [finished]

    results = ctx.graph.while_loop(cond_fn, body_fn, [live] + start + [done], ctrl=ctx.here())
    return [stacked(r) for r in results[1:-1]]


def _has_effects(block):
    return any(n.kind in STATEFUL_KINDS for sub in block.subgraphs.values()
               for g in sub.all_graphs() for n in g.nodes.values())


def _static_count(ctx, ref):
    value = ctx.spec(ref).value
    return None if value is None else int(value.item())


def convert_parfor(node, inputs, ctx):
    """
    A nested PARFOR of m iterations inside a loop of n rows becomes one loop of
    n * m rows: row r stands for outer row r // m and inner iteration r % m.
    Outputs are folded back to [n, m, ...]. Without loop-variant inputs or
    effects the inner loop runs once and its outputs stay unstacked.
    """
    count, captures = inputs[0], inputs[1:]
    if count.stacked:
        raise VectorizeError('nested parfor needs a loop-invariant iteration count')
    invariant = not any(w.stacked for w in captures) and not _has_effects(node.block)
    ctx.diagnostics.record(node, PATHS.control, 'invariant nested loop' if invariant else 'flattened nested loop')
    outer = ctx.derive(iters=ctx.constant(1, DTYPE.I64), static_iters=1) if invariant else ctx
    m, m_static = count.ref, _static_count(ctx, count.ref)
    n_static = outer.static_iters
    total = ctx.emit('mul', outer.iters, m)
    inner_ids = stacked(ctx.emit('reshape', ctx.emit('tile_leading', ctx.emit('range', m), outer.iters), shape=[-1]))
    flat_static = None if n_static is None or m_static is None else n_static * m_static
    flat_ctx = ctx.derive(iters=total, static_iters=flat_static, lvr=inner_ids, lvr_identity=False)
    body = node.block.subgraphs['body']
    rows = list(captures)
    if not invariant:
        # outer row of every flattened row
        tiled = ctx.emit('tile_leading', ctx.emit('range', ctx.iters), m)
        outer_rows = ctx.emit('reshape', ctx.emit('transpose', tiled, perm=[1, 0]), shape=[-1])
        rows = [stacked(ctx.emit('gather_rows', w.ref, outer_rows)) if w.stacked else w for w in captures]
    bindings = _block_bindings(body, rows)
    for b in body.nodes.values():
        if b.kind == 'loop_var':
            bindings[b.id] = inner_ids
    results = []
    for w, spec in zip(convert_graph(body, flat_ctx, bindings), node.specs):
        if spec.shape is None or not all(d is not None for d in spec.shape[1:]):
            raise VectorizeError(f'nested parfor outputs need static row shapes, got {spec.describe()}')
        row = list(spec.shape[1:])
        lead = [] if invariant else [-1 if n_static is None else n_static]
        shape = lead + [-1 if m_static is None else m_static] + row
        if shape.count(-1) > 1 or (-1 in shape and 0 in shape):
            raise VectorizeError('nested parfor needs static iteration counts to restore its rows')
        results.append(WrappedValue(ctx.emit('reshape', flat_ctx.materialize(w), shape=shape), not invariant))
    return results


def _prune(graph, first_id, keep):
    """Drop stateless nodes emitted after first_id that nothing consumes."""
    uses = Counter()
    for node in graph.nodes.values():
        for r in node.inputs:
            uses[r.node] += 1
        for d in node.control_deps:
            uses[d] += 1
    for r in list(graph.outputs) + list(keep):
        uses[r.node] += 1
    for node_id in sorted((i for i in graph.nodes if i > first_id), reverse=True):
        node = graph.nodes[node_id]
        if uses[node_id] or node.block is not None or node.kind in STATEFUL_KINDS:
            continue
        for r in node.inputs:
            uses[r.node] -= 1
        for d in node.control_deps:
            uses[d] -= 1
        graph.remove_node(node_id)


def vectorize(graph, node_id, policy=None, registry=None, diagnostics=None):
    """
    Replace the PARFOR node node_id of graph by its vectorized form and return the
    refs now holding its stacked outputs. Nested PARFOR blocks are flattened into
    this one (see convert_parfor).
    """
    node = graph.nodes[node_id]
    if node.kind != BLOCK_KINDS.PARFOR:
        raise VectorizeError(f'node {node_id} is a {node.kind}, not a parfor', node_id=node_id)
    policy = policy or VectorizePolicy()
    if registry is None:
        from . import converters  # noqa: F401  registers the stateless converter table
        registry = DEFAULT_REGISTRY
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    body = node.block.subgraphs['body']

    first_id = graph.root.last_id
    recorded = len(diagnostics.entries)
    iters = node.inputs[0]
    value = graph.spec(iters).value
    ctx = ConversionContext(graph, iters, None if value is None else int(value.item()),
                            registry=registry, policy=policy, diagnostics=diagnostics,
                            ctrl=tuple(sorted(node.control_deps)))
    ctx.lvr = stacked(ctx.emit('range', iters))
    ctx.lvr_identity = True
    bindings = _block_bindings(body, [unstacked(r) for r in node.inputs[1:]])
    for b in body.nodes.values():
        if b.kind == 'loop_var':
            bindings[b.id] = ctx.lvr
    outputs = [ctx.materialize(w) for w in convert_graph(body, ctx, bindings)]

    for port, ref in enumerate(outputs):
        graph.replace_all_uses(Ref(node_id, port), ref)
    waiting = [n.id for n in graph.nodes.values() if node_id in n.control_deps]
    graph.retarget_control_deps(node_id, ())
    graph.remove_node(node_id)
    _prune(graph, first_id, outputs)
    replacement = frozenset(i for i in graph.nodes if i > first_id)
    for waiting_id in waiting:
        user = graph.nodes[waiting_id]
        user.control_deps = user.control_deps | replacement

    tally = Counter(e.path for e in diagnostics.entries[recorded:])
    log.info(f'Vectorizer - parfor {node_id}: {len(body.nodes)} body nodes, '
             f'{tally[PATHS.fast]} fast, {tally[PATHS.generic]} generic, {tally[PATHS.fallback]} fallback')
    return outputs
