import os
from contextlib import contextmanager
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.management.base import BaseCommand, CommandError

from core.scenario import parse_override, resolve_scenario


def format_validation_error(exc):
    if hasattr(exc, 'error_dict'):
        return '; '.join(f'{field}: {", ".join(messages)}'
                         for field, messages in sorted(exc.message_dict.items()))
    return '; '.join(exc.messages)


@contextmanager
def reported_errors():
    """Turn library errors into CommandError: 1 for bad input, 2 for I/O trouble."""
    try:
        yield
    except ValidationError as exc:
        raise CommandError(f'invalid scenario: {format_validation_error(exc)}', returncode=1)
    except (ImproperlyConfigured, ValueError) as exc:
        raise CommandError(str(exc), returncode=1)
    except FileNotFoundError as exc:
        raise CommandError(str(exc), returncode=1)
    except OSError as exc:
        raise CommandError(str(exc), returncode=2)


class ScenarioCommand(BaseCommand):
    """Shared options: a scenario path or preset name, ``--out``, ``--seed`` and ``--set``."""

    scenario_args = (('scenario', 'Scenario JSON file or preset name'),)

    def execute(self, *args, **options):
        if 'NO_COLOR' in os.environ:
            options['no_color'] = True
        return super().execute(*args, **options)

    def add_arguments(self, parser):
        for name, text in self.scenario_args:
            parser.add_argument(name, help=text)
        parser.add_argument(
            '--out',
            default=None,
            help='Output directory (default: NODESIM OUTPUT_DIR)'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Override the scenario seed'
        )
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            dest='overrides',
            help='Override a scenario key by dotted path; repeatable'
        )

    def out_dir(self, options):
        return Path(options['out'] or settings.NODESIM['OUTPUT_DIR'])

    def overrides(self, options):
        return dict(parse_override(text) for text in options['overrides'])

    def load(self, source, options, extra=None):
        overrides = {**self.overrides(options), **(extra or {})}
        return resolve_scenario(source, overrides=overrides, seed=options['seed'])
