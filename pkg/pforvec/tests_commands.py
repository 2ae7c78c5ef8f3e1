#!/usr/bin/env python
# -*- coding: utf-8 -*-
# Python Standard Libraries
import csv
from io import StringIO
import os
import tempfile

# Installed packages (via pip)
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from django.test.utils import override_settings
from mock import patch

# Internal project dependencies
from . import ops
from .harness import CSV_HEADER, VerifyReport, bench_one, run_bench, run_demo, run_verify
from .exceptions import UnknownDemo
from .vectorizer import DEFAULT_REGISTRY, PATHS


def broken_registry():
    """Unary ops converted to the identity, so every vectorized unary op is wrong."""
    registry = DEFAULT_REGISTRY.copy()

    def passthrough(ctx, node, inputs):
        ctx.diagnostics.record(node, PATHS.fast)
        return [inputs[0]]

    registry.register(*ops.UNARY_KINDS)(passthrough)
    return registry


class TestVerify(SimpleTestCase):
    def test_empty_corpus(self):
        out = StringIO()
        call_command('verify', '--count=0', stdout=out)
        self.assertIn('0 passed, 0 failed, 0 errors', out.getvalue())

    def test_small_corpus_passes(self):
        out = StringIO()
        call_command('verify', '--count=3', '--max-depth=2', stdout=out)
        lines = out.getvalue().splitlines()
        self.assertEqual([line for line in lines if line.startswith('graph ')],
                         ['graph 0: PASS', 'graph 1: PASS', 'graph 2: PASS'])
        self.assertEqual(lines[-1], '3 passed, 0 failed, 0 errors')

    def test_control_flow_corpus_passes(self):
        report = run_verify(seed=42, count=20, max_depth=3, weights={'elementwise': 0.5, 'control': 0.5})
        self.assertEqual(report.failed, [])
        self.assertEqual(report.internal_errors, [])
        self.assertEqual(report.passed, 20)

    def test_explain_prints_paths(self):
        out = StringIO()
        call_command('verify', '--count=1', '--max-depth=2', '--iters=3', '--explain', stdout=out)
        self.assertIn('conversion paths:', out.getvalue())

    def test_broken_converter_is_caught(self):
        lines = []
        report = run_verify(seed=7, count=10, max_depth=3, weights={'elementwise': 1.0},
                            registry=broken_registry(), write=lines.append)
        self.assertFalse(report.ok)
        self.assertTrue(report.failed)
        self.assertFalse(report.internal_errors)
        self.assertIn('  | pforvec-graph 1', lines)
        self.assertTrue(any(line.endswith(': FAIL') for line in lines))

    def test_failures_are_dumped(self):
        with tempfile.TemporaryDirectory() as directory:
            report = run_verify(seed=7, count=10, max_depth=3, weights={'elementwise': 1.0},
                                registry=broken_registry(), dump_dir=directory)
            names = sorted(os.listdir(directory))
            self.assertEqual(len(names), len(report.failed))
            k, n, _ = report.failed[0]
            with open(os.path.join(directory, f'graph_{k}_n{n}.txt')) as f:
                self.assertEqual(f.readline().strip(), 'pforvec-graph 1')

    @override_settings(PFORVEC_TOLERANCE=1e-6, PFORVEC_STEP_BUDGET=1000, PFORVEC_VERIFY_ITERS=[2],
                       PFORVEC_GENERATOR_WEIGHTS={'elementwise': 1.0})
    @patch('pforvec.management.commands.verify.run_verify')
    def test_settings_are_passed_through(self, run):
        run.return_value = VerifyReport(passed=1)
        call_command('verify', '--count=1', '--weights=control=0.5', '--stateful-policy=fallback',
                     stdout=StringIO())
        _, kwargs = run.call_args
        self.assertEqual(kwargs['tolerance'], 1e-6)
        self.assertEqual(kwargs['step_budget'], 1000)
        self.assertEqual(kwargs['iters'], [2])
        self.assertEqual(kwargs['weights'], {'elementwise': 1.0, 'control': 0.5})
        self.assertEqual(kwargs['stateful_policy'], 'fallback')

    @patch('pforvec.management.commands.verify.run_verify')
    def test_exit_status(self, run):
        run.return_value = VerifyReport(passed=0, failed=[(0, 1, ['mismatch'])])
        with self.assertRaises(CommandError) as failed:
            call_command('verify', '--count=1', stdout=StringIO())
        self.assertEqual(failed.exception.returncode, 1)

        run.return_value = VerifyReport(internal_errors=[(0, 1, 'oracle crashed')])
        with self.assertRaises(CommandError) as crashed:
            call_command('verify', '--count=1', stdout=StringIO())
        self.assertEqual(crashed.exception.returncode, 2)

        run.side_effect = RuntimeError('boom')
        with self.assertRaises(CommandError) as stopped:
            call_command('verify', '--count=1', stdout=StringIO())
        self.assertEqual(stopped.exception.returncode, 2)


class TestBench(SimpleTestCase):
    def test_writes_csv(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'bench', 'linear.csv')
            call_command('bench', '--model=linear', '--batches=1,4', '--repeats=1', f'--out={path}',
                         stdout=StringIO())
            with open(path, newline='') as f:
                rows = list(csv.reader(f))
        self.assertEqual(tuple(rows[0]), CSV_HEADER)
        self.assertEqual(len(rows), 1 + 2 * 2)
        self.assertEqual([(r[1], r[2]) for r in rows[1:]],
                         [('vectorized', '1'), ('fallback_loop', '1'), ('vectorized', '4'), ('fallback_loop', '4')])

    def test_vectorized_dispatch_does_not_grow_with_batch(self):
        records = run_bench('linear', [1, 8, 32], repeats=1, modes=['vectorized'])
        self.assertEqual(len({r.dispatch_count for r in records}), 1)

    def test_oracle_mode(self):
        out = StringIO()
        call_command('bench', '--model=jacobian', '--batches=2', '--repeats=1', '--with-oracle', stdout=out)
        self.assertIn('jacobian oracle batch=2', out.getvalue())

    def test_unknown_model(self):
        with self.assertRaises(CommandError) as unknown:
            call_command('bench', '--model=resnet', '--batches=1', stdout=StringIO())
        self.assertEqual(unknown.exception.returncode, 2)
        self.assertIn('resnet', str(unknown.exception))


class TestDemo(SimpleTestCase):
    def test_demos_pass(self):
        for name in ('jacobian', 'per_example', 'map'):
            out = StringIO()
            call_command('demo', name, stdout=out)
            self.assertIn('verdict: PASS', out.getvalue())

    def test_jacobian_output(self):
        lines = []
        report = run_demo('jacobian', write=lines.append)
        self.assertTrue(report.passed)
        self.assertEqual(lines[0], 'f(x) = x * x')

    def test_unknown_demo(self):
        with self.assertRaises(UnknownDemo):
            run_demo('softmax')

    @patch('pforvec.management.commands.demo.run_demo')
    def test_wrong_result_exit_status(self, run):
        run.return_value.passed = False
        with self.assertRaises(CommandError) as wrong:
            call_command('demo', 'map', stdout=StringIO())
        self.assertEqual(wrong.exception.returncode, 1)


class TestJacobianDispatchTrend(SimpleTestCase):
    def test_vectorized_stays_flat_while_fallback_grows(self):
        vectorized = [bench_one('jacobian', m, 'vectorized', repeats=1).dispatch_count for m in (4, 16, 64)]
        fallback = [bench_one('jacobian', m, 'fallback_loop', repeats=1).dispatch_count for m in (4, 16, 64)]
        self.assertEqual(len(set(vectorized)), 1)
        self.assertLess(fallback[0], fallback[1])
        self.assertLess(fallback[1], fallback[2])
        self.assertGreaterEqual(fallback[2], 5 * vectorized[2])
