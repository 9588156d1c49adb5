import json
from dataclasses import asdict

from django.core.management.base import CommandError

from core import files
from core.engine import config_differences, link_pdr, link_sweep, max_range, power_overlap
from core.scenario import config_digest

from ._base import ScenarioCommand, reported_errors


def read_channel(path):
    with open(path, encoding='utf-8') as f:
        document = json.load(f)
    channel = document.get('channel', document)
    return {f'channel.{key}': value for key, value in channel.items()}


class Command(ScenarioCommand):
    help = 'Compare the links of two scenarios that differ only in their radio.'
    scenario_args = (('scenario_a', 'First scenario file or preset'),
                     ('scenario_b', 'Second scenario file or preset'))

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--channel',
            default=None,
            help='channel.json written by calibrate; replaces both channels'
        )

    def handle(self, *args, **options):
        out_dir = self.out_dir(options)
        with reported_errors():
            channel = read_channel(options['channel']) if options['channel'] else {}
            a = self.load(options['scenario_a'], options, channel)
            b = self.load(options['scenario_b'], options, channel)

        divergent = config_differences(a.config, b.config)
        if divergent:
            raise CommandError(
                f'scenarios differ outside the radio: {", ".join(divergent)}', returncode=1
            )

        digest = config_digest({'a': a.config, 'b': b.config})
        distances = a.sweep_distances
        with reported_errors():
            pdr_a = link_sweep(a, distances)
            pdr_b = link_sweep(b, distances)
            ranges = [
                (p, max_range(distances, link_sweep(a, distances, p)),
                 max_range(distances, link_sweep(b, distances, p)))
                for p in power_overlap(a.radio, b.radio)
            ]
            files.write_csv(out_dir / 'pdr_vs_distance.csv', ('d_m', 'pdr_a', 'pdr_b', 'delta'),
                            [(d, pa, pb, pa - pb) for d, pa, pb in zip(distances, pdr_a, pdr_b)],
                            digest)
            files.write_csv(out_dir / 'range_vs_power.csv',
                            ('power_dbm', 'max_range_a', 'max_range_b'), ranges, digest)
            files.write_json(out_dir / 'config.resolved', {
                'config_digest': digest,
                'config': {'a': a.config, 'b': b.config},
                'channel': asdict(a.channel),
            })

        at_a, at_b = link_pdr(a), link_pdr(b)
        self.stdout.write(
            f'{a.name} vs {b.name} at {a.distance:g} m: '
            f'pdr_a={at_a:.4f} pdr_b={at_b:.4f}'
        )
        self.stdout.write(self.style.SUCCESS(f'delta={at_a - at_b:+.4f}'))
