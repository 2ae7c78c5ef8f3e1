"""
Console entry point: `pforvec verify|bench|demo ...` runs the management
command of the same name under the standalone settings.
"""
# Python Standard Libraries
import os
import sys


def main(argv=None):
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'pforvec.settings.standalone')
    # Installed packages (via pip)
    from django.core.management import execute_from_command_line
    argv = list(sys.argv if argv is None else argv)
    execute_from_command_line([os.path.basename(argv[0]) if argv else 'pforvec'] + argv[1:])


if __name__ == '__main__':
    main()
