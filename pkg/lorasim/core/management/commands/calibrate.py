from dataclasses import asdict

from core import files
from core.engine import CalibrationTarget, calibrate_channel, link_pdr, parse_grid
from core.scenario import config_digest

from ._base import ScenarioCommand, reported_errors

TARGET_COLUMNS = ('scenario', 'distance_m', 'tx_power_dbm', 'observed_pdr')


class Command(ScenarioCommand):
    help = 'Fit path-loss exponent and shadowing sigma to observed PDR targets.'
    scenario_args = (('targets', 'CSV of scenario,distance_m,tx_power_dbm,observed_pdr'),)

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--grid',
            default='n=2:4:0.1,sigma=0:12:0.5',
            help='Search grid, "n=start:stop:step,sigma=start:stop:step"'
        )

    def handle(self, *args, **options):
        out_dir = self.out_dir(options)
        with reported_errors():
            rows = files.read_csv_rows(options['targets'])
            missing = [c for c in TARGET_COLUMNS if rows and c not in rows[0]]
            if not rows or missing:
                raise ValueError(f'{options["targets"]}: needs rows with columns {", ".join(TARGET_COLUMNS)}')
            scenarios = {}
            targets = []
            for row in rows:
                name = row['scenario']
                if name not in scenarios:
                    scenarios[name] = self.load(name, options)
                targets.append(CalibrationTarget(
                    scenario=scenarios[name],
                    distance=float(row['distance_m']),
                    tx_power=float(row['tx_power_dbm']),
                    observed_pdr=float(row['observed_pdr']),
                ))
            grid = parse_grid(options['grid'])
            fit = calibrate_channel(targets, grid)

            digest = config_digest({'targets': rows, 'grid': options['grid'],
                                    'scenarios': {k: v.config for k, v in sorted(scenarios.items())}})
            files.write_csv(out_dir / 'calibration.csv', ('n', 'sigma', 'residual'), fit.grid, digest)
            files.write_json(out_dir / 'channel.json', {
                'config_digest': digest,
                'channel': asdict(fit.channel),
                'residual': fit.fun,
            })

        n, sigma = fit.x
        self.stdout.write(self.style.SUCCESS(f'n={n:g} sigma={sigma:g} residual={fit.fun:.4g}'))
        for target in targets:
            predicted = link_pdr(target.scenario, target.distance, target.tx_power, fit.channel)
            self.stdout.write(f'  {target.scenario.name} {target.distance:g} m: '
                              f'observed={target.observed_pdr:.4f} predicted={predicted:.4f}')
