# Installed packages (via pip)
from django.core.management.base import BaseCommand, CommandError

# Internal project dependencies
from pforvec.exceptions import PforvecError
from pforvec.harness import DEMOS, run_demo


class Command(BaseCommand):
    help = 'Run a small worked example and print its inputs, outputs and verdict'

    def add_arguments(self, parser):
        parser.add_argument('name', choices=[key for key, _ in DEMOS])

    def handle(self, *args, **options):
        try:
            report = run_demo(options['name'], write=self.stdout.write)
        except PforvecError as e:
            raise CommandError(str(e), returncode=2)
        if not report.passed:
            raise CommandError(f'demo {options["name"]} produced a wrong result', returncode=1)
