# Python Standard Libraries
import logging

# Installed packages (via pip)
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

# Internal project dependencies
from pforvec import utils
from pforvec.exceptions import UnknownModel
from pforvec.harness import run_bench
from pforvec.workloads import MODES

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Time a workload vectorized against the sequential fallback loop and write a CSV'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True)
        parser.add_argument('--batches', type=utils.parse_int_list, default=[1, 16, 256])
        parser.add_argument('--repeats', type=int, default=3)
        parser.add_argument('--out', default=None, help='CSV destination')
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--with-oracle', action='store_true', help='also time the interpreter on the PARFOR block')

    def handle(self, *args, **options):
        modes = [MODES.vectorized, MODES.fallback_loop]
        if options['with_oracle']:
            modes.append(MODES.oracle)
        seed = options['seed'] if options['seed'] is not None else settings.PFORVEC_BENCH_SEED
        try:
            run_bench(
                options['model'],
                options['batches'],
                repeats=options['repeats'],
                out=options['out'],
                seed=seed,
                modes=modes,
                step_budget=None,
                write=self.stdout.write,
            )
        except UnknownModel as e:
            raise CommandError(str(e), returncode=2)
        except Exception as e:
            logger.error(f'Bench - {options["model"]} error: {format(str(e))}')
            raise CommandError(f'bench stopped by an internal error: {e}', returncode=2)
