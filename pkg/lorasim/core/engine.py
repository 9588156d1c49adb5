"""
Fixed-step simulation of one transmitter and one receiver.

``run_scenario`` advances both nodes in steps of ``dt``. The transmitter is
fed by a ``PowerPath``: source → main capacitor → hysteresis comparator →
sensor and radio UFoP banks. Packet outcomes come from a generator seeded
with ``(seed, sequence number)`` so they do not depend on the step size.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from scipy.optimize import OptimizeResult
from scipy.stats import norm

from . import files
from .energy import capacitor_step, charge_flow, comparator_step, harvester_current, ufop_step
from .node import (
    RADIO_PHASES, EventKind, NodePhase, NodeState, PhaseDemand, Role, abandon_ack,
    count_boot_loops, fail_transmission, min_bank_capacitance, node_step, phase_demand,
    start_listening, tx_feasibility,
)
from .phy import (
    airtime, average_tx_current, link_margin, packet_energy, pdr_analytic, sample_packet_outcome,
    sensitivity, tx_current,
)
from .scenario import numeric_paths, with_overrides

logger = logging.getLogger(__name__)

LISTENING_PHASES = (NodePhase.SEARCH_IDLE, NodePhase.RECEIVING)

SUMMARY_FIELDS = (
    'scenario', 'seed', 'packets_sent', 'packets_delivered', 'pdr', 'tx_attempts',
    'tx_failures_under_current', 'tx_failures_bank_depleted', 'acks_received', 'brownouts',
    'boot_loops_detected', 'energy_harvested', 'energy_consumed', 'energy_shunted',
    'energy_stored_delta', 'mean_source_current',
)


@dataclass(frozen=True)
class SimResult:
    scenario: str = ''
    seed: int = 0
    packets_sent: int = 0
    packets_delivered: int = 0
    pdr: float = 0.0
    tx_attempts: int = 0
    tx_failures_under_current: int = 0
    tx_failures_bank_depleted: int = 0
    acks_received: int = 0
    brownouts: int = 0
    boot_loops_detected: int = 0
    energy_harvested: float = 0.0
    energy_consumed: float = 0.0
    energy_shunted: float = 0.0
    energy_stored_delta: float = 0.0
    mean_source_current: float = 0.0
    current_series: tuple = ()
    event_log: tuple = ()
    config_echo: dict = None
    config_digest: str = ''

    def summary_row(self):
        return [getattr(self, name) for name in SUMMARY_FIELDS]


class PowerStep(NamedTuple):
    source_current: float
    sensor: object
    radio: object


class PowerPath:
    """
    Main capacitor, comparator and UFoP banks of one node.

    The path keeps its own energy ledger. Harvested energy is what the
    source put into the main capacitor; consumed energy is everything that
    left the capacitors towards loads, including conversion losses into
    the banks; shunted energy is what the clamps burnt.
    """

    def __init__(self, scenario, with_ufops=True):
        self.harvest = scenario.harvest
        self.supply = scenario.supply
        self.main = scenario.main_cap
        self.comparator = scenario.main_comparator
        self.sensor = scenario.sensor_ufop if with_ufops else None
        self.radio = scenario.radio_ufop if with_ufops else None
        self.harvested = 0.0
        self.consumed = 0.0
        self.shunted = 0.0
        self.initial_energy = self.stored_energy

    @property
    def units(self):
        return [unit for unit in (self.sensor, self.radio) if unit is not None]

    @property
    def stored_energy(self):
        return self.main.stored_energy + sum(unit.bank.stored_energy for unit in self.units)

    def rail_on(self):
        self.comparator = comparator_step(self.comparator, self.main.voltage)
        return self.comparator.output

    def _headroom(self, unit, available, board, taken, dt):
        # charge the rail can spare without dropping below the unit's charge-start level
        spare = (self.main.capacitance * max(0.0, self.main.voltage - unit.charge_start_v)
                 + (available - board - taken) / 1000.0 * dt)
        return max(0.0, spare) * 1000.0 / dt

    def step(self, t, demand, sensor_gate, radio_gate, dt):
        rail_v = self.main.voltage if self.comparator.output else 0.0
        bench = self.supply.mode == 'bench'
        available = self.supply.current_limit if bench else harvester_current(self.harvest, t)
        board = demand.board

        taken = 0.0
        flows = []
        steps = {}
        for name, gate, load in (('sensor', sensor_gate, demand.sensor),
                                 ('radio', radio_gate, demand.radio)):
            unit = getattr(self, name)
            if unit is None:
                steps[name] = None
                continue
            if unit.gate_closed != gate:
                unit = replace(unit, gate_closed=gate)
            result = ufop_step(unit, rail_v, load, dt,
                               supply_limit=self._headroom(unit, available, board, taken, dt))
            taken += result.charge_current
            flows.append(charge_flow(unit.bank, result.unit.bank,
                                     result.charge_current / 1000.0 * dt,
                                     result.delivered / 1000.0 * dt))
            setattr(self, name, result.unit)
            steps[name] = result

        if bench:
            refill = self.main.capacitance * max(0.0, self.supply.voltage - self.main.voltage) * 1000.0 / dt
            source = min(available, board + taken + refill)
        else:
            source = available

        before = self.main
        self.main = capacitor_step(before, source - board - taken, dt)
        main_flow = charge_flow(before, self.main, source / 1000.0 * dt, (board + taken) / 1000.0 * dt)

        self.harvested += main_flow.energy_in
        self.consumed += main_flow.energy_out + sum(f.energy_out - f.energy_in for f in flows)
        self.shunted += main_flow.energy_shunted + sum(f.energy_shunted for f in flows)
        return PowerStep(source_current=source, sensor=steps['sensor'], radio=steps['radio'])


def node_budget(scenario):
    radio = scenario.radio
    return replace(
        scenario.budget,
        tx_current=tx_current(radio.current_curve, radio.tx_power),
        tx_airtime=airtime(radio, scenario.payload_len),
        ack_airtime=airtime(radio, scenario.ack_bytes) if scenario.ack_bytes > 0 else 0.0,
    )


def packet_rng(seed, seq):
    return np.random.default_rng([seed, seq])


def run_scenario(sc):
    """Run one scenario to completion; the result depends only on ``sc``."""
    logger.info('running %s: %.6g s at dt=%.6g s, seed %d', sc.name, sc.duration, sc.dt, sc.seed)
    budget = node_budget(sc)
    rx_sensitivity = sensitivity(sc.radio)
    bench = sc.supply.mode == 'bench'
    tx_demand_peak = budget.tx_current + budget.draws[NodePhase.TRANSMITTING]
    # below the radio's minimum supply the radio never gets through a packet
    radio_powered = sc.rail_voltage >= sc.radio.min_supply_v
    rx_present = sc.receiver_mode != 'absent'

    tx_path = PowerPath(sc)
    rx_path = PowerPath(sc, with_ufops=False) if sc.receiver_mode == 'harvested' else None
    tx = NodeState(role=Role.TRANSMITTER)
    rx = NodeState(role=Role.RECEIVER)

    events = []
    series = []
    counts = dict.fromkeys(('delivered', 'attempts', 'acks'), 0)
    source_charge = 0.0
    radio_interrupt = tx_path.radio.bank.voltage >= tx_path.radio.interrupt_v
    sensor_interrupt = tx_path.sensor.bank.voltage >= tx_path.sensor.interrupt_v
    radio_ok = tx_path.radio.regulator_ok
    heard = False

    steps = int(round(sc.duration / sc.dt))
    for i in range(steps):
        t = i * sc.dt

        # receiver first, so a TxStarted this step sees its current phase
        if rx_present:
            rx_on = rx_path.rail_on() if rx_path else True
            rx_step = node_step(rx, rx_on, True, True, budget, sc.duty_period, sc.dt)
            rx = rx_step.state
            events.extend(rx_step.events)
            if rx_path:
                rx_path.step(t, PhaseDemand(rx_step.demand, 0.0, 0.0), False, False, sc.dt)

        step = node_step(tx, tx_path.rail_on(), radio_interrupt, sensor_interrupt, budget,
                         sc.duty_period, sc.dt, radio_ok=radio_ok)
        tx = step.state
        for event in step.events:
            events.append(event)
            if event.kind == EventKind.TX_STARTED:
                counts['attempts'] += 1
                heard = rx.phase in LISTENING_PHASES
                if heard:
                    rx = start_listening(rx, budget.tx_airtime)
            elif event.kind == EventKind.TX_COMPLETED:
                if heard and rx.phase != NodePhase.OFF:
                    outcome = sample_packet_outcome(sc.channel, rx_sensitivity, sc.radio.tx_power,
                                                    sc.distance, packet_rng(sc.seed, event.seq))
                    if outcome:
                        counts['delivered'] += 1
                        tx = replace(tx, ack_pending=True)
                heard = False
            elif event.kind == EventKind.ACK_RECEIVED:
                counts['acks'] += 1

        failure = None
        if tx.phase == NodePhase.TRANSMITTING:
            if not radio_powered:
                failure = EventKind.TX_FAILED_BANK_DEPLETED
            elif bench and tx_demand_peak > sc.supply.current_limit:
                failure = EventKind.TX_FAILED_UNDER_CURRENT
        if failure:
            tx, event = fail_transmission(tx, failure)
            events.append(event)
            heard = False

        demand = phase_demand(tx.phase, budget)
        power = tx_path.step(t, demand, tx.phase == NodePhase.SENSING, tx.phase in RADIO_PHASES, sc.dt)
        source_charge += power.source_current * sc.dt

        radio_interrupt = power.radio.interrupt
        sensor_interrupt = power.sensor.interrupt
        radio_ok = power.radio.regulator_ok
        if tx.phase == NodePhase.TRANSMITTING:
            if not power.radio.regulator_ok:
                failure = EventKind.TX_FAILED_BANK_DEPLETED
            elif power.radio.under_supplied:
                failure = EventKind.TX_FAILED_UNDER_CURRENT
            if failure:
                tx, event = fail_transmission(tx, failure)
                events.append(event)
                heard = False
                logger.debug('%s at %.6f s (seq %d)', failure, event.time, event.seq)
        elif tx.phase in LISTENING_PHASES and not power.radio.regulator_ok:
            tx = abandon_ack(tx)

        if sc.record_current and i % sc.current_sample_every == 0:
            series.append((t, demand.total))

    paths = [p for p in (tx_path, rx_path) if p is not None]
    kinds = [event.kind for event in events]
    sent = tx.packets_sent
    result = SimResult(
        scenario=sc.name,
        seed=sc.seed,
        packets_sent=sent,
        packets_delivered=counts['delivered'],
        pdr=counts['delivered'] / sent if sent else 0.0,
        tx_attempts=counts['attempts'],
        tx_failures_under_current=kinds.count(EventKind.TX_FAILED_UNDER_CURRENT),
        tx_failures_bank_depleted=kinds.count(EventKind.TX_FAILED_BANK_DEPLETED),
        acks_received=counts['acks'],
        brownouts=kinds.count(EventKind.BROWNOUT),
        boot_loops_detected=sum(count_boot_loops(node.boot_events, sc.boot_loop_k, sc.boot_loop_window)
                                for node in (tx, rx)),
        energy_harvested=sum(p.harvested for p in paths),
        energy_consumed=sum(p.consumed for p in paths),
        energy_shunted=sum(p.shunted for p in paths),
        energy_stored_delta=sum(p.stored_energy - p.initial_energy for p in paths),
        mean_source_current=source_charge / sc.duration if sc.duration > 0 else 0.0,
        current_series=tuple(series),
        event_log=tuple(events),
        config_echo=sc.config,
        config_digest=sc.digest,
    )
    logger.info('%s finished: sent=%d delivered=%d brownouts=%d boot_loops=%d',
                sc.name, result.packets_sent, result.packets_delivered, result.brownouts,
                result.boot_loops_detected)
    return result


def write_result(result, out_dir):
    """Write summary.csv, events.csv, current.csv (when recorded) and config.resolved."""
    out_dir = Path(out_dir)
    digest = result.config_digest
    written = [
        files.write_csv(out_dir / 'summary.csv', SUMMARY_FIELDS, [result.summary_row()], digest),
        files.write_csv(out_dir / 'events.csv', ('time_s', 'node', 'event', 'seq'),
                        ([e.time, str(e.node), str(e.kind), e.seq] for e in result.event_log), digest),
    ]
    if result.current_series:
        written.append(files.write_csv(out_dir / 'current.csv', ('time_s', 'current_mA'),
                                       result.current_series, digest))
    written.append(files.write_resolved_config(out_dir, result.config_echo, digest))
    return written


# -- link analysis -----------------------------------------------------------

def link_pdr(sc, distance=None, tx_power=None, channel=None):
    channel = channel or sc.channel
    distance = sc.distance if distance is None else distance
    margin = link_margin(channel, sc.radio, distance, tx_power)
    return pdr_analytic(margin, channel.shadowing_sigma)


def link_sweep(sc, distances, tx_power=None, channel=None):
    return [link_pdr(sc, d, tx_power, channel) for d in distances]


def max_range(distances, pdrs, threshold=None):
    """Largest distance whose PDR reaches ``threshold``; 0 when none does."""
    threshold = settings.NODESIM['RANGE_PDR_THRESHOLD'] if threshold is None else threshold
    reached = [d for d, p in zip(distances, pdrs) if p >= threshold]
    return max(reached) if reached else 0.0


def power_overlap(radio_a, radio_b):
    low = math.ceil(max(radio_a.power_range[0], radio_b.power_range[0]))
    high = math.floor(min(radio_a.power_range[1], radio_b.power_range[1]))
    return list(range(low, high + 1))


def config_differences(a, b, ignore=('name', 'radio'), prefix=''):
    """Dotted keys whose values differ between two resolved configs."""
    keys = []
    for key in sorted(set(a) | set(b)):
        path = f'{prefix}{key}'
        if not prefix and key in ignore:
            continue
        left, right = a.get(key), b.get(key)
        if isinstance(left, dict) and isinstance(right, dict):
            keys.extend(config_differences(left, right, ignore, f'{path}.'))
        elif left != right:
            keys.append(path)
    return keys


# -- sweeps ------------------------------------------------------------------

class SweepTable(NamedTuple):
    param_path: str
    rows: list
    seed_rows: list


SWEEP_FIELDS = ('value', 'seeds', 'mean_pdr', 'mean_packets_sent', 'mean_packets_delivered',
                'mean_energy_consumed', 'mean_brownouts', 'mean_source_current')
SWEEP_SEED_FIELDS = ('value', 'seed') + SUMMARY_FIELDS[2:]


def _sweep_point(sc, param_path, value, per_point_seeds):
    return [run_scenario(with_overrides(sc, {param_path: value}, seed=sc.seed + index))
            for index in range(per_point_seeds)]


def sweep(sc, param_path, values, per_point_seeds=1, workers=None):
    """
    Run ``per_point_seeds`` simulations per value of ``param_path``.

    Seeds are ``sc.seed + index``. Rows keep the order of ``values``.
    """
    valid = numeric_paths(sc.config)
    if param_path not in valid:
        raise ImproperlyConfigured(f'{param_path!r} is not a numeric scenario path; '
                                   f'valid paths: {", ".join(valid)}')
    if per_point_seeds < 1:
        raise ValueError(f'per_point_seeds must be >= 1, got {per_point_seeds}')
    values = list(values)
    workers = settings.NODESIM['SWEEP_WORKERS'] if workers is None else workers

    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, sc, param_path, v, per_point_seeds) for v in values]
            results = [future.result() for future in futures]
    else:
        results = []
        for index, value in enumerate(values, start=1):
            results.append(_sweep_point(sc, param_path, value, per_point_seeds))
            logger.info('sweep %s: %d/%d done', param_path, index, len(values))

    rows, seed_rows = [], []
    for value, runs in zip(values, results):
        rows.append([
            value,
            len(runs),
            float(np.mean([r.pdr for r in runs])),
            float(np.mean([r.packets_sent for r in runs])),
            float(np.mean([r.packets_delivered for r in runs])),
            float(np.mean([r.energy_consumed for r in runs])),
            float(np.mean([r.brownouts for r in runs])),
            float(np.mean([r.mean_source_current for r in runs])),
        ])
        seed_rows.extend([value] + r.summary_row()[1:] for r in runs)
    return SweepTable(param_path=param_path, rows=rows, seed_rows=seed_rows)


# -- calibration -------------------------------------------------------------

class CalibrationTarget(NamedTuple):
    scenario: object
    distance: float
    tx_power: float
    observed_pdr: float


def parse_range(text):
    """``"5,11,17"`` → those values; ``"100:2000:100"`` → start to stop inclusive by step."""
    text = text.strip()
    if not text:
        return []
    if ':' not in text:
        return [float(x) for x in text.split(',')]
    bounds = [float(x) for x in text.split(':')]
    if len(bounds) != 3 or bounds[2] <= 0 or bounds[1] < bounds[0]:
        raise ValueError(f'range {text!r} must be start:stop:step with step > 0 and stop >= start')
    count = int(math.floor((bounds[1] - bounds[0]) / bounds[2] + 1e-9)) + 1
    return [float(v) for v in np.round(bounds[0] + bounds[2] * np.arange(count), 9)]


def parse_grid(text):
    """``"n=2:4:0.1,sigma=0:12:0.5"`` → {'n': array, 'sigma': array}; a bare number is one point."""
    grid = {}
    for part in text.split(','):
        name, sep, values = part.partition('=')
        name = name.strip()
        if not sep or name not in ('n', 'sigma'):
            raise ValueError(f'grid entry {part!r} must be n=... or sigma=...')
        grid[name] = np.array(parse_range(values), dtype=float)
    missing = {'n', 'sigma'} - set(grid)
    if missing:
        raise ValueError(f'grid is missing {sorted(missing)}')
    if np.any(grid['n'] <= 0) or np.any(grid['sigma'] < 0):
        raise ValueError('grid needs n > 0 and sigma >= 0')
    return grid


def _grid_pdr(target, exponents, sigmas):
    sc = target.scenario
    ch = sc.channel
    # margin = ptx + gains - pl0 - 10 n log10(d/d0) - sensitivity, over the n axis
    margins = (target.tx_power + ch.tx_gain + ch.rx_gain - ch.pl0
               - 10.0 * exponents[:, None] * math.log10(target.distance / ch.d0)
               - sensitivity(sc.radio))
    with np.errstate(divide='ignore', invalid='ignore'):
        soft = norm.cdf(margins / sigmas[None, :])
    hard = (margins >= 0).astype(float)
    return np.where(sigmas[None, :] == 0, hard, soft)


def calibrate_channel(targets, grid):
    """
    Grid search over path-loss exponent and shadowing sigma.

    Minimises the sum of squared differences between the analytic PDR and
    each target's observed PDR. Ties go to the smaller exponent, then the
    smaller sigma. ``x`` of the result is ``(n, sigma)``, ``fun`` the residual
    and ``channel`` the first target's channel with both replaced.
    """
    if not targets:
        raise ValueError('calibration needs at least one target')
    exponents = np.sort(np.asarray(grid['n'], dtype=float))
    sigmas = np.sort(np.asarray(grid['sigma'], dtype=float))
    if not exponents.size or not sigmas.size:
        raise ValueError('calibration grid is empty')
    for target in targets:
        if target.distance < target.scenario.channel.d0:
            raise ValueError(f'target distance {target.distance} m is inside d0')

    residuals = np.zeros((exponents.size, sigmas.size))
    for target in targets:
        residuals += (_grid_pdr(target, exponents, sigmas) - target.observed_pdr) ** 2

    best = np.unravel_index(int(np.argmin(residuals)), residuals.shape)
    n, sigma = float(exponents[best[0]]), float(sigmas[best[1]])
    channel = replace(targets[0].scenario.channel, exponent=n, shadowing_sigma=sigma)
    logger.info('calibrated channel n=%.6g sigma=%.6g residual=%.6g', n, sigma, residuals[best])
    return OptimizeResult(
        x=(n, sigma), fun=float(residuals[best]), channel=channel,
        grid=[(float(e), float(s), float(residuals[i, j]))
              for i, e in enumerate(exponents) for j, s in enumerate(sigmas)],
        nfev=residuals.size, success=True, status=0, message='Grid complete',
    )


# -- feasibility -------------------------------------------------------------

class FeasibilityReport(NamedTuple):
    feasible: bool
    required: float
    available: float
    min_capacitance: float
    capacitance: float
    airtime: float
    average_current: float
    packet_energy: float


def feasibility_report(sc):
    """Can one packet be sent from the radio bank alone, between interrupt and collapse levels?"""
    unit = sc.radio_ufop
    # an empty payload has nothing to send
    packet_airtime = airtime(sc.radio, sc.payload_len) if sc.payload_len > 0 else 0.0
    i_avg = average_tx_current(sc.radio)
    verdict = tx_feasibility(unit.bank, unit.interrupt_v, unit.min_operating_v, i_avg, packet_airtime)
    return FeasibilityReport(
        feasible=verdict.feasible,
        required=verdict.required,
        available=verdict.available,
        min_capacitance=min_bank_capacitance(verdict.required, unit.interrupt_v, unit.min_operating_v),
        capacitance=unit.bank.capacitance,
        airtime=packet_airtime,
        average_current=i_avg,
        packet_energy=packet_energy(sc.rail_voltage, i_avg, packet_airtime),
    )
