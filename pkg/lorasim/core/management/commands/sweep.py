from core import files
from core.engine import SWEEP_FIELDS, SWEEP_SEED_FIELDS, parse_range, sweep

from ._base import ScenarioCommand, reported_errors


class Command(ScenarioCommand):
    help = 'Run a scenario over a list of values for one numeric key and aggregate per value.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--param',
            required=True,
            help='Dotted path of the numeric key to sweep, e.g. radio.tx_power'
        )
        parser.add_argument(
            '--values',
            required=True,
            help='Comma list ("5,11,17,23") or start:stop:step ("100:2000:100")'
        )
        parser.add_argument(
            '--seeds',
            type=int,
            default=1,
            help='Runs per value; seeds are base seed + index'
        )
        parser.add_argument(
            '--workers',
            type=int,
            default=None,
            help='Worker processes (default: NODESIM SWEEP_WORKERS)'
        )

    def handle(self, *args, **options):
        out_dir = self.out_dir(options)
        with reported_errors():
            scenario = self.load(options['scenario'], options)
            values = parse_range(options['values'])
            table = sweep(scenario, options['param'], values,
                          per_point_seeds=options['seeds'], workers=options['workers'])
            files.write_csv(out_dir / 'sweep.csv', SWEEP_FIELDS, table.rows, scenario.digest)
            files.write_csv(out_dir / 'sweep_seeds.csv', SWEEP_SEED_FIELDS, table.seed_rows,
                            scenario.digest)
            files.write_resolved_config(out_dir, scenario.config, scenario.digest)

        for row in table.rows:
            self.stdout.write(f'{table.param_path}={row[0]:g} pdr={row[2]:.4f} sent={row[3]:g}')
        self.stdout.write(self.style.SUCCESS(f'{len(table.rows)} sweep points written to {out_dir}'))
