from core.engine import run_scenario, write_result
from core.models import SimulationRun

from ._base import ScenarioCommand, reported_errors


class Command(ScenarioCommand):
    help = 'Run one scenario and write summary.csv, events.csv and config.resolved.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--record',
            action='store_true',
            help='Also store the summary as a SimulationRun row'
        )

    def handle(self, *args, **options):
        out_dir = self.out_dir(options)
        with reported_errors():
            scenario = self.load(options['scenario'], options)
            result = run_scenario(scenario)
            write_result(result, out_dir)

        if options['record']:
            SimulationRun.from_result(result).save()

        line = (f'pdr={result.pdr:.4f} sent={result.packets_sent} '
                f'delivered={result.packets_delivered} brownouts={result.brownouts} '
                f'boot_loops={result.boot_loops_detected}')
        healthy = not (result.brownouts or result.boot_loops_detected)
        self.stdout.write(self.style.SUCCESS(line) if healthy else self.style.WARNING(line))
        if options['verbosity'] > 1:
            self.stdout.write(f'results in {out_dir}')
