# -*- coding:utf-8 -*-
"""
Line-oriented text format for graphs.

    pforvec-graph 1
    var acc = {"dtype": "F64", "shape": [], "data": [0.0]}
    0 = constant(value={"dtype": "I64", "shape": [], "data": [4]})
    1 = parfor(inputs=[[0, 0]]) {
      body {
        2 = loop_var()
        outputs [[2, 0]]
      }
    }
    outputs [[1, 0]]

Attribute values are JSON; tensors are {"dtype", "shape", "data"} objects with the
flat row-major buffer. Indentation is cosmetic.
"""
# Python Standard Libraries
import itertools
import json
import logging
import re

# Installed packages (via pip)
import numpy as np

# Internal project dependencies
from . import ops
from .exceptions import ParseError
from .graph import BLOCK_ROLES, Block, BlockScope, Graph, Node, OpSignature, Ref
from .ops import BLOCK_KINDS, TensorSpec
from .tensor import DTYPE, NUMPY_DTYPES, TensorValue


log = logging.getLogger(__name__)

HEADER = 'pforvec-graph 1'
INDENT = '  '

_NODE_HEAD = re.compile(r'(?:node\s+)?(\d+)\s*=\s*([A-Za-z_]\w*)')
_KEY = re.compile(r'([A-Za-z_]\w*)=')
_VAR = re.compile(r'var\s+([A-Za-z_][\w.]*)\s*=\s*')
_SECTION = re.compile(r'([A-Za-z_]\w*)\s*\{$')
_decoder = json.JSONDecoder()


def _encode(value):
    if isinstance(value, TensorValue):
        return {'dtype': value.dtype, 'shape': list(value.shape), 'data': value.data}
    if isinstance(value, (tuple, list)):
        return [_encode(v) for v in value]
    return value


def _decode(value):
    if isinstance(value, dict) and set(value) == {'dtype', 'shape', 'data'}:
        array = np.array(value['data'], dtype=NUMPY_DTYPES[value['dtype']])
        return TensorValue(value['dtype'], array.reshape(value['shape']))
    return value


def _dumps(value):
    return json.dumps(_encode(value))


def _refs(refs):
    return json.dumps([[r.node, r.port] for r in refs])


def _node_line(node):
    items = [f'{key}={_dumps(node.attrs[key])}' for key in sorted(node.attrs)]
    if node.inputs:
        items.append(f'inputs={_refs(node.inputs)}')
    line = f'{node.id} = {node.kind}({", ".join(items)})'
    if node.control_deps:
        line += f' ctrl={json.dumps(sorted(node.control_deps))}'
    if node.block is not None:
        line += ' {'
    return line


def _write_graph(graph, lines, depth):
    pad = INDENT * depth
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        lines.append(pad + _node_line(node))
        if node.block is not None:
            for role in BLOCK_ROLES[node.kind]:
                lines.append(f'{pad}{INDENT}{role} {{')
                _write_graph(node.block.subgraphs[role], lines, depth + 2)
                lines.append(f'{pad}{INDENT}}}')
            lines.append(pad + '}')
    if depth > 0 or graph.outputs:
        lines.append(f'{pad}outputs {_refs(graph.outputs)}')


def serialize(graph):
    """Text form of graph; node lines are written in id order."""
    lines = [HEADER]
    for name in sorted(graph.variables):
        lines.append(f'var {name} = {_dumps(graph.variables[name])}')
    _write_graph(graph, lines, 0)
    return '\n'.join(lines) + '\n'


class _Parser(object):

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0
        self.max_id = -1

    def error(self, message, column=1):
        return ParseError(message, line=self.pos + 1, column=column)

    def current(self):
        raw = self.lines[self.pos]
        start = len(raw) - len(raw.lstrip())
        return raw, start

    def parse(self):
        if not self.lines or self.lines[0].strip() != HEADER:
            raise ParseError(f'expected header {HEADER!r}', line=1, column=1)
        self.pos = 1
        graph = Graph()
        self.parse_graph(graph, closing=False)
        graph.root._ids = itertools.count(self.max_id + 1)
        graph.root.last_id = self.max_id
        graph.refresh()
        return graph

    def parse_graph(self, graph, closing):
        while self.pos < len(self.lines):
            raw, start = self.current()
            text = raw.strip()
            if not text:
                self.pos += 1
                continue
            if text == '}':
                if not closing:
                    raise self.error('unexpected "}"', start + 1)
                self.pos += 1
                return
            if text.startswith('outputs'):
                graph.outputs = self.parse_refs(raw, start + len('outputs'))
                self.pos += 1
            elif text.startswith('var '):
                if graph.parent is not None:
                    raise self.error('variables can only be declared at top level', start + 1)
                self.parse_variable(graph, raw, start)
                self.pos += 1
            else:
                self.parse_node(graph, raw, start)
        if closing:
            raise self.error('unexpected end of input, missing "}"')

    def parse_json(self, raw, pos):
        try:
            return _decoder.raw_decode(raw, pos)
        except json.JSONDecodeError as e:
            raise self.error(f'invalid value: {e.msg}', e.colno)

    def skip_spaces(self, raw, pos):
        while pos < len(raw) and raw[pos] == ' ':
            pos += 1
        return pos

    def parse_refs(self, raw, pos):
        pos = self.skip_spaces(raw, pos)
        value, end = self.parse_json(raw, pos)
        try:
            refs = [Ref(int(n), int(p)) for n, p in value]
        except (TypeError, ValueError):
            raise self.error('expected a list of [node, port] pairs', pos + 1)
        if raw[end:].strip():
            raise self.error('trailing characters', end + 1)
        return refs

    def parse_variable(self, graph, raw, start):
        m = _VAR.match(raw, start)
        if m is None:
            raise self.error('malformed variable declaration', start + 1)
        value, end = self.parse_json(raw, m.end())
        value = _decode(value)
        if not isinstance(value, TensorValue):
            raise self.error('variable initial value must be a tensor', m.end() + 1)
        graph.variables[m.group(1)] = value

    def parse_node(self, graph, raw, start):
        m = _NODE_HEAD.match(raw, start)
        if m is None:
            raise self.error('expected "<id> = <kind>(...)"', start + 1)
        node_id, kind = int(m.group(1)), m.group(2)
        if not ops.is_known_kind(kind):
            raise self.error(f'unknown op kind {kind!r}', m.start(2) + 1)
        if graph.owner(node_id) is not None:
            raise self.error(f'duplicate node id {node_id}', m.start(1) + 1)
        pos = self.skip_spaces(raw, m.end())
        if pos >= len(raw) or raw[pos] != '(':
            raise self.error('expected "("', pos + 1)
        pos += 1
        attrs, inputs = {}, []
        while True:
            pos = self.skip_spaces(raw, pos)
            if pos < len(raw) and raw[pos] == ')':
                pos += 1
                break
            key = _KEY.match(raw, pos)
            if key is None:
                raise self.error('expected "name=value" or ")"', pos + 1)
            value, pos = self.parse_json(raw, key.end())
            if key.group(1) == 'inputs':
                try:
                    inputs = [Ref(int(n), int(p)) for n, p in value]
                except (TypeError, ValueError):
                    raise self.error('inputs must be [node, port] pairs', key.end() + 1)
            else:
                attrs[key.group(1)] = _decode(value)
            pos = self.skip_spaces(raw, pos)
            if pos < len(raw) and raw[pos] == ',':
                pos += 1
        ctrl = []
        pos = self.skip_spaces(raw, pos)
        if raw.startswith('ctrl=', pos):
            value, pos = self.parse_json(raw, pos + len('ctrl='))
            ctrl = [int(d) for d in value]
            pos = self.skip_spaces(raw, pos)
        opens_block = raw.startswith('{', pos)
        if opens_block:
            pos += 1
        if raw[pos:].strip():
            raise self.error('trailing characters', pos + 1)
        if opens_block != (kind in BLOCK_KINDS):
            raise self.error(f'{kind} {"cannot" if opens_block else "must"} open a block', pos + 1)
        self.max_id = max(self.max_id, node_id)
        self.pos += 1

        block = None
        arity = 0 if kind in ('assign', 'assign_add') else 1
        if kind in BLOCK_KINDS:
            block = self.parse_block(graph, kind, inputs)
            arity = len(block.subgraphs[BLOCK_ROLES[kind][0] if kind == BLOCK_KINDS.COND else 'body'].outputs)
        node = Node(node_id, OpSignature(kind, attrs), tuple(inputs), frozenset(ctrl),
                    tuple(TensorSpec(DTYPE.F64, None) for _ in range(arity)), block)
        graph._register(node)
        if block is not None:
            block.scope.graph = graph
            block.scope.node_id = node_id

    def parse_block(self, graph, kind, inputs):
        scope = BlockScope()
        subgraphs = {}
        for role in BLOCK_ROLES[kind]:
            while self.pos < len(self.lines) and not self.lines[self.pos].strip():
                self.pos += 1
            if self.pos >= len(self.lines):
                raise self.error(f'missing {role} section')
            raw, start = self.current()
            m = _SECTION.match(raw.strip())
            if m is None or m.group(1) != role:
                raise self.error(f'expected "{role} {{"', start + 1)
            self.pos += 1
            sub = Graph(parent=graph, scope=scope, role=role, block_kind=kind)
            self.parse_graph(sub, closing=True)
            sub._captures = {n.attrs['index']: n.id for n in sub.nodes.values() if n.kind == 'capture'}
            subgraphs[role] = sub
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines) or self.lines[self.pos].strip() != '}':
            raise self.error(f'expected "}}" closing the {kind} block')
        self.pos += 1
        n_carried = len(subgraphs['body'].outputs) if kind == BLOCK_KINDS.WHILE else 0
        block = Block(kind, subgraphs, scope, n_carried)
        for ref in inputs[block.capture_offset():]:
            scope.add(ref)
        return block


def deserialize(text):
    """
    Parse the text format back into a Graph with identical ids, attrs and
    payloads. Raises ParseError with the line and column of the first problem.
    """
    return _Parser(text).parse()
