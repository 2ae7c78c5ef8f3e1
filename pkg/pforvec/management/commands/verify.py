# Python Standard Libraries
import logging

# Installed packages (via pip)
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

# Internal project dependencies
from pforvec import utils
from pforvec.harness import run_verify
from pforvec.vectorizer import STATEFUL_POLICIES

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Check vectorized PARFOR programs against the SIMD interpreter on a random corpus'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=42)
        parser.add_argument('--count', type=int, default=200)
        parser.add_argument('--max-depth', type=int, default=8)
        parser.add_argument('--iters', type=utils.parse_int_list, default=None,
                            help='comma-separated iteration counts, e.g. 0,1,3,7')
        parser.add_argument('--weights', type=utils.parse_weights, default=None,
                            help='generator weights, e.g. elementwise=0.6,control=0.4')
        parser.add_argument('--stateful-policy', choices=[key for key, _ in STATEFUL_POLICIES], default=None)
        parser.add_argument('--explain', action='store_true', help='print the conversion path of every node')
        parser.add_argument('--dump', dest='dump_dir', default=None, help='directory for failing graphs')

    def handle(self, *args, **options):
        iters = options['iters'] if options['iters'] is not None else settings.PFORVEC_VERIFY_ITERS
        weights = dict(settings.PFORVEC_GENERATOR_WEIGHTS)
        weights.update(options['weights'] or {})
        try:
            report = run_verify(
                seed=options['seed'],
                count=options['count'],
                max_depth=options['max_depth'],
                iters=iters,
                weights=weights,
                tolerance=settings.PFORVEC_TOLERANCE,
                step_budget=settings.PFORVEC_STEP_BUDGET,
                stateful_policy=options['stateful_policy'] or settings.PFORVEC_STATEFUL_POLICY,
                explain=options['explain'],
                dump_dir=options['dump_dir'],
                write=self.stdout.write,
            )
        except Exception as e:
            logger.error(f'Verify - internal error: {format(str(e))}')
            raise CommandError(f'verify stopped by an internal error: {e}', returncode=2)
        if report.internal_errors:
            raise CommandError(f'{len(report.internal_errors)} graphs hit internal errors', returncode=2)
        if report.failed:
            raise CommandError(f'{len(report.failed)} of {options["count"]} graphs mismatched', returncode=1)
