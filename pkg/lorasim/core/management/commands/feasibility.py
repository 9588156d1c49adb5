from core.engine import feasibility_report

from ._base import ScenarioCommand, reported_errors


class Command(ScenarioCommand):
    help = 'Check whether the radio bank alone can carry one packet, and the bank size that would.'

    def handle(self, *args, **options):
        with reported_errors():
            scenario = self.load(options['scenario'], options)
            report = feasibility_report(scenario)

        verdict = 'feasible' if report.feasible else 'infeasible'
        self.stdout.write(
            (self.style.SUCCESS if report.feasible else self.style.ERROR)(
                f'{verdict}: required={report.required:.4g} C deliverable={report.available:.4g} C'
            )
        )
        self.stdout.write(
            f'airtime={report.airtime * 1000:.4g} ms average_current={report.average_current:.4g} mA '
            f'bank={report.capacitance * 1e6:.4g} uF C_min={report.min_capacitance * 1e6:.4g} uF'
        )
        self.stdout.write(
            f'energy={report.packet_energy * 1000:.4g} mJ per packet at {scenario.rail_voltage:g} V'
        )
