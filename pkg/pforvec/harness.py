# -*- coding:utf-8 -*-
"""
Runners behind the verify, bench and demo commands. They return report objects
and write human-readable lines through the given write callable; the command
layer turns reports into exit statuses.
"""
# Python Standard Libraries
from dataclasses import dataclass, field
import csv
import logging
import os
import time

# Installed packages (via pip)
from model_utils import Choices
import numpy as np

# Internal project dependencies
from . import utils
from .api import jacobian, map_fn, per_example_gradients
from .autodiff import gradient
from .corpus import ProgramGenerator
from .exceptions import HarnessError, PforvecError, UnknownDemo
from .graph import Graph
from .interpreter import Interpreter, RngState, VariableStore
from .serialization import serialize
from .tensor import DTYPE, tensor
from .vectorizer import Diagnostics, VectorizePolicy, vectorize
from .workloads import MODES, build_workload


log = logging.getLogger(__name__)

DEMOS = Choices('jacobian', 'per_example', 'map')
CSV_HEADER = ('model', 'mode', 'batch', 'wall_time_s', 'dispatch_count', 'throughput')


def _silent(line=''):
    pass


# Verify

@dataclass
class VerifyReport:
    passed: int = 0
    failed: list = field(default_factory=list)
    internal_errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failed and not self.internal_errors


def _run(graph, budget, seed):
    store = VariableStore.from_graph(graph)
    interpreter = Interpreter(store, RngState(seed=seed), budget)
    outputs = interpreter.run(graph)
    return outputs, store.snapshot(), interpreter.dispatch_count


def _check_random(value):
    if value.dtype != DTYPE.F64:
        return f'random output has dtype {value.dtype}'
    if value.size and (value.array.min() < 0.0 or value.array.max() >= 1.0):
        return 'random output outside [0, 1)'
    return None


def compare_case(case, expected, actual, tolerance):
    """Mismatch descriptions between the oracle and vectorized runs of case."""
    expected_outputs, expected_store = expected
    actual_outputs, actual_store = actual
    problems = []
    if len(expected_outputs) != len(actual_outputs):
        return [f'expected {len(expected_outputs)} outputs, got {len(actual_outputs)}']
    for k, (a, b) in enumerate(zip(expected_outputs, actual_outputs)):
        if k in case.random_outputs:
            if a.shape != b.shape:
                problems.append(f'output {k}: random shape {list(b.shape)}, expected {list(a.shape)}')
            reason = _check_random(b)
            if reason:
                problems.append(f'output {k}: {reason}')
            continue
        for _, reason in utils.compare_outputs([a], [b], tolerance):
            problems.append(f'output {k}: {reason}')
    for name, reason in utils.compare_stores(expected_store, actual_store, tolerance):
        problems.append(f'variable {name}: {reason}')
    return problems


def run_verify(seed=42, count=200, max_depth=8, iters=(0, 1, 3, 7), weights=None, tolerance=1e-9,
               step_budget=None, stateful_policy='error', registry=None, explain=False, dump_dir=None,
               write=_silent):
    """
    Generate count random PARFOR programs and check, for every iteration count,
    that the vectorized graph matches the interpreter on outputs and final
    variable values.
    """
    generator = ProgramGenerator(seed, max_depth=max_depth, weights=weights)
    policy = VectorizePolicy(stateful=stateful_policy)
    report = VerifyReport()
    for k in range(count):
        verdict = 'PASS'
        for n in iters:
            try:
                oracle_case = generator.build(k, n)
                expected = _run(oracle_case.graph, step_budget, seed)[:2]
            except Exception as e:
                log.error(f'Verify - graph {k} failed at n={n}, error: {format(str(e))}')
                report.internal_errors.append((k, n, str(e)))
                verdict = 'ERROR'
                break
            case = generator.build(k, n)
            diagnostics = Diagnostics()
            try:
                vectorize(case.graph, case.node_id, policy=policy, registry=registry, diagnostics=diagnostics)
                errors = case.graph.validate()
                if errors:
                    problems = [f'invalid vectorized graph: {e}' for e in errors]
                else:
                    actual = _run(case.graph, step_budget, seed)[:2]
                    problems = compare_case(case, expected, actual, tolerance)
            except PforvecError as e:
                problems = [f'{type(e).__name__}: {e}']
            if problems:
                log.error(f'Verify - graph {k} failed at n={n}, error: {"; ".join(problems)}')
                report.failed.append((k, n, problems))
                verdict = 'FAIL'
                for problem in problems:
                    write(f'  n={n}: {problem}')
                _dump(oracle_case.graph, k, n, dump_dir, write)
                break
            if explain:
                write(f'  n={n} conversion paths:')
                for line in diagnostics.to_text().splitlines():
                    write(f'    {line}')
        write(f'graph {k}: {verdict}')
        if verdict == 'PASS':
            report.passed += 1
    write(f'{report.passed} passed, {len(report.failed)} failed, {len(report.internal_errors)} errors')
    return report


def _dump(graph, k, n, dump_dir, write):
    text = serialize(graph)
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        path = os.path.join(dump_dir, f'graph_{k}_n{n}.txt')
        with open(path, 'w') as f:
            f.write(text)
        write(f'  dumped to {path}')
    else:
        for line in text.splitlines():
            write(f'  | {line}')


# Bench

@dataclass
class BenchRecord:
    model: str
    mode: str
    batch: int
    wall_time_s: float
    dispatch_count: int
    throughput: float

    def row(self):
        return [self.model, self.mode, self.batch, f'{self.wall_time_s:.6f}', self.dispatch_count,
                f'{self.throughput:.3f}']


def bench_one(model, batch, mode, repeats=3, seed=0, step_budget=None):
    """Time repeats executions of one workload after one warm-up run."""
    workload = build_workload(model, batch, mode, seed)
    _run(workload.graph, step_budget, seed)
    wall, dispatch = 0.0, 0
    for _ in range(repeats):
        start = time.perf_counter()
        _, _, dispatch = _run(workload.graph, step_budget, seed)
        wall += time.perf_counter() - start
    throughput = batch * repeats / wall if wall > 0 else float('inf')
    return BenchRecord(model, mode, batch, wall, dispatch, throughput)


def run_bench(model, batches, repeats=3, out=None, seed=0, modes=(MODES.vectorized, MODES.fallback_loop),
              step_budget=None, write=_silent):
    records = []
    for batch in batches:
        for mode in modes:
            record = bench_one(model, batch, mode, repeats, seed, step_budget)
            write(f'{model} {mode} batch={batch}: {record.dispatch_count} dispatches, '
                  f'{record.throughput:.1f} items/s')
            records.append(record)
    if out:
        write_csv(records, out)
    return records


def write_csv(records, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow(record.row())


# Demo

@dataclass
class DemoReport:
    name: str
    passed: bool
    lines: list = field(default_factory=list)


def _evaluate(graph, refs):
    store = VariableStore.from_graph(graph)
    return Interpreter(store).run(graph, fetches=refs)


def _demo_jacobian():
    x = np.array([1.0, 2.0, 3.0])
    g = Graph()
    xr = g.constant(x)
    result = jacobian(g, g.op('mul', xr, xr), xr)
    (value,) = _evaluate(g, [result])
    expected = tensor(np.diag(2.0 * x), DTYPE.F64)
    return ['f(x) = x * x', f'x = {utils.format_tensor(tensor(x))}', f'jacobian = {utils.format_tensor(value)}'], \
        utils.tensors_close(value, expected, 1e-12)


def _demo_per_example(batch=4):
    rng = np.random.default_rng(0)
    g = Graph()
    w = g.constant(rng.normal(size=(3,)))
    xs = g.constant(rng.normal(size=(batch, 3)))

    def loss(sub, i):
        return sub.op('square', sub.op('reduce_sum', sub.op('mul', w, sub.op('gather_rows', xs, i)), axes=[0]))

    rows = per_example_gradients(g, loss, batch, w)
    total_loss = g.op('reduce_sum', g.op('square', g.op('reduce_sum', g.op('mul', xs, w), axes=[1])), axes=[0])
    total = gradient(g, total_loss, w)
    per_row, expected = _evaluate(g, [rows, total])
    summed = tensor(per_row.array.sum(axis=0), DTYPE.F64)
    lines = [f'loss_i = (w . x_i)^2, batch {batch}', f'per-example gradients = {utils.format_tensor(per_row)}',
             f'sum of rows = {utils.format_tensor(summed)}', f'batch gradient = {utils.format_tensor(expected)}']
    return lines, utils.tensors_close(summed, expected, 1e-9)


def _demo_map():
    g = Graph()
    x = g.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
    mapped = map_fn(g, lambda sub, row: row, x)
    sums = map_fn(g, lambda sub, row: sub.op('reduce_sum', row, axes=[0]), x)
    value, row_sums = _evaluate(g, [mapped, sums])
    lines = [f'x = {utils.format_tensor(_evaluate(g, [x])[0])}', f'map identity = {utils.format_tensor(value)}',
             f'map row sum = {utils.format_tensor(row_sums)}']
    ok = utils.tensors_close(value, tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), 0.0) and \
        utils.tensors_close(row_sums, tensor(np.array([3.0, 7.0])), 1e-12)
    return lines, ok


_DEMOS = {
    DEMOS.jacobian: _demo_jacobian,
    DEMOS.per_example: _demo_per_example,
    DEMOS.map: _demo_map,
}


def run_demo(name, write=_silent):
    if name not in _DEMOS:
        raise UnknownDemo(f'unknown demo {name!r}, expected one of {[key for key, _ in DEMOS]}')
    try:
        lines, passed = _DEMOS[name]()
    except PforvecError as e:
        raise HarnessError(f'demo {name} failed, error: {format(str(e))}')
    for line in lines:
        write(line)
    write(f'verdict: {"PASS" if passed else "FAIL"}')
    return DemoReport(name, passed, lines)


__all__ = ['run_verify', 'run_bench', 'run_demo']
