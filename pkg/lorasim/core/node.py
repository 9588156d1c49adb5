"""
Duty-cycled node state machine.

``node_step`` is a pure transition function over ``NodeState``. The engine
owns one state per node, feeds it the rail and UFoP interrupt levels for
each step, and reports transmission failures it detects on the energy side
through ``fail_transmission``.
"""
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from django.db import models

from .energy import deliverable_charge

# phase boundaries are accumulated float sums of dt
TIME_EPS = 1e-9


class NodePhase(models.TextChoices):
    OFF = 'off', 'Off'
    BOOTING = 'booting', 'Booting'
    SLEEP = 'sleep', 'Sleep'
    SENSING = 'sensing', 'Sensing'
    TRANSMITTING = 'transmitting', 'Transmitting'
    SEARCH_IDLE = 'search_idle', 'Search idle'
    RECEIVING = 'receiving', 'Receiving'


class Role(models.TextChoices):
    TRANSMITTER = 'tx', 'Transmitter'
    RECEIVER = 'rx', 'Receiver'


class EventKind(models.TextChoices):
    BOOT_STARTED = 'BootStarted'
    BOOT_COMPLETED = 'BootCompleted'
    SENSE_DONE = 'SenseDone'
    TX_STARTED = 'TxStarted'
    TX_COMPLETED = 'TxCompleted'
    TX_FAILED_UNDER_CURRENT = 'TxFailedUnderCurrent'
    TX_FAILED_BANK_DEPLETED = 'TxFailedBankDepleted'
    BROWNOUT = 'Brownout'
    ACK_RECEIVED = 'AckReceived'


TX_FAILURES = (EventKind.TX_FAILED_UNDER_CURRENT, EventKind.TX_FAILED_BANK_DEPLETED)

DEFAULT_DRAWS = {
    NodePhase.OFF: 0.0,
    NodePhase.BOOTING: 5.0,
    NodePhase.SLEEP: 1.8,
    NodePhase.SENSING: 0.0,
    NodePhase.TRANSMITTING: 0.0,
    NodePhase.SEARCH_IDLE: 12.0,
    NodePhase.RECEIVING: 10.0,
}

RADIO_PHASES = (NodePhase.TRANSMITTING, NodePhase.RECEIVING, NodePhase.SEARCH_IDLE)


@dataclass(frozen=True)
class CurrentBudget:
    """
    Per-phase supply currents in mA.

    ``draws`` is what the board takes in each phase. Sensing adds
    ``sensor_current`` and Transmitting adds ``tx_current``; both of those
    flow through the peripheral's UFoP. Receiving and SearchIdle draws are
    radio current too.

    A transmitter whose ACK window closes without an ACK searches for the
    receiver in SearchIdle for ``search_timeout`` seconds before sleeping.
    """

    draws: dict = field(default_factory=lambda: dict(DEFAULT_DRAWS))
    boot_duration: float = 0.1
    sense_duration: float = 0.2
    sensor_current: float = 2.0
    tx_current: float = 0.0
    tx_airtime: float = 0.0
    ack_airtime: float = 0.0
    search_timeout: float = 0.0


class PhaseDemand(NamedTuple):
    board: float
    sensor: float
    radio: float

    @property
    def total(self):
        return self.board + self.sensor + self.radio


@dataclass(frozen=True)
class BootEvent:
    time: float
    completed_cycle: bool = False


@dataclass(frozen=True)
class NodeEvent:
    kind: str
    time: float
    node: str = Role.TRANSMITTER
    seq: int = -1


@dataclass(frozen=True)
class NodeState:
    role: str = Role.TRANSMITTER
    phase: str = NodePhase.OFF
    phase_elapsed: float = 0.0
    duty_timer: float = 0.0
    packets_sent: int = 0
    boot_events: tuple = ()
    clock: float = 0.0
    # sequence number of the packet in flight (transmitter) or being heard (receiver)
    tx_seq: int = 0
    ack_pending: bool = False
    rx_window: float = 0.0


class NodeStep(NamedTuple):
    state: NodeState
    events: list
    demand: float


class Feasibility(NamedTuple):
    feasible: bool
    required: float
    available: float

    @property
    def shortfall(self):
        return max(0.0, self.required - self.available)


def phase_demand(phase, budget):
    draw = budget.draws.get(phase, 0.0)
    if phase == NodePhase.OFF:
        return PhaseDemand(0.0, 0.0, 0.0)
    if phase == NodePhase.SENSING:
        return PhaseDemand(draw, budget.sensor_current, 0.0)
    if phase == NodePhase.TRANSMITTING:
        return PhaseDemand(draw, 0.0, budget.tx_current)
    if phase in (NodePhase.RECEIVING, NodePhase.SEARCH_IDLE):
        return PhaseDemand(0.0, 0.0, draw)
    return PhaseDemand(draw, 0.0, 0.0)


def phase_current(phase, budget):
    return phase_demand(phase, budget).total


def _enter(state, phase, **changes):
    return replace(state, phase=phase, phase_elapsed=0.0, **changes)


def _complete_cycle(boot_events):
    if not boot_events or boot_events[-1].completed_cycle:
        return boot_events
    return boot_events[:-1] + (replace(boot_events[-1], completed_cycle=True),)


def node_step(state, rail_on, radio_interrupt, sensor_interrupt, budget, duty_period, dt,
              radio_ok=True):
    now = state.clock + dt
    events = []

    def emit(kind, seq=-1):
        events.append(NodeEvent(kind=kind, time=now, node=state.role, seq=seq))

    if not rail_on:
        if state.phase != NodePhase.OFF:
            if state.phase != NodePhase.SLEEP:
                emit(EventKind.BROWNOUT)
            if state.phase == NodePhase.TRANSMITTING and not radio_ok:
                emit(EventKind.TX_FAILED_BANK_DEPLETED, state.tx_seq)
            state = _enter(state, NodePhase.OFF, duty_timer=0.0, ack_pending=False)
        return NodeStep(replace(state, clock=now), events, 0.0)

    if state.phase == NodePhase.OFF:
        emit(EventKind.BOOT_STARTED)
        state = _enter(state, NodePhase.BOOTING,
                       boot_events=state.boot_events + (BootEvent(time=now),))
        return NodeStep(replace(state, clock=now), events,
                        phase_current(state.phase, budget))

    elapsed = state.phase_elapsed + dt
    duty_timer = max(0.0, state.duty_timer - dt)
    state = replace(state, phase_elapsed=elapsed, duty_timer=duty_timer)

    if state.phase == NodePhase.BOOTING:
        if elapsed >= budget.boot_duration - TIME_EPS:
            emit(EventKind.BOOT_COMPLETED)
            if state.role == Role.RECEIVER:
                state = _enter(state, NodePhase.SEARCH_IDLE,
                               boot_events=_complete_cycle(state.boot_events))
            else:
                state = _enter(state, NodePhase.SLEEP, duty_timer=0.0)

    elif state.phase == NodePhase.SLEEP:
        if duty_timer <= TIME_EPS and sensor_interrupt:
            state = _enter(state, NodePhase.SENSING, duty_timer=duty_period)

    elif state.phase == NodePhase.SENSING:
        if elapsed >= budget.sense_duration - TIME_EPS:
            emit(EventKind.SENSE_DONE)
            if state.role == Role.TRANSMITTER and radio_interrupt:
                seq = state.tx_seq + 1
                emit(EventKind.TX_STARTED, seq)
                state = _enter(state, NodePhase.TRANSMITTING, tx_seq=seq, ack_pending=False)
            else:
                state = _enter(state, NodePhase.SLEEP)

    elif state.phase == NodePhase.TRANSMITTING:
        if elapsed >= budget.tx_airtime - TIME_EPS:
            emit(EventKind.TX_COMPLETED, state.tx_seq)
            state = replace(state, packets_sent=state.packets_sent + 1,
                            boot_events=_complete_cycle(state.boot_events))
            if budget.ack_airtime > 0:
                state = _enter(state, NodePhase.RECEIVING)
            else:
                state = _enter(state, NodePhase.SLEEP)

    elif state.phase == NodePhase.RECEIVING:
        if state.role == Role.TRANSMITTER:
            if elapsed >= budget.ack_airtime - TIME_EPS:
                if state.ack_pending:
                    emit(EventKind.ACK_RECEIVED, state.tx_seq)
                    state = _enter(state, NodePhase.SLEEP, ack_pending=False)
                elif budget.search_timeout > 0:
                    state = _enter(state, NodePhase.SEARCH_IDLE)
                else:
                    state = _enter(state, NodePhase.SLEEP)
        elif elapsed >= state.rx_window - TIME_EPS:
            state = _enter(state, NodePhase.SEARCH_IDLE)

    elif state.phase == NodePhase.SEARCH_IDLE:
        if state.role == Role.TRANSMITTER and elapsed >= budget.search_timeout - TIME_EPS:
            state = _enter(state, NodePhase.SLEEP)

    return NodeStep(replace(state, clock=now), events, phase_current(state.phase, budget))


def fail_transmission(state, kind):
    """Abort the packet in flight; the cycle stays incomplete."""
    event = NodeEvent(kind=kind, time=state.clock, node=state.role, seq=state.tx_seq)
    return _enter(state, NodePhase.SLEEP, ack_pending=False), event


def abandon_ack(state):
    return _enter(state, NodePhase.SLEEP, ack_pending=False)


def start_listening(state, window):
    """Receiver hears a preamble and stays in Receiving for ``window`` seconds."""
    return _enter(state, NodePhase.RECEIVING, rx_window=window)


def detect_boot_loop(boot_events, k, window):
    if k < 2 or window <= 0:
        raise ValueError(f'boot-loop detector needs k >= 2 and window > 0, got k={k}, window={window}')
    run = []
    for event in boot_events:
        if event.completed_cycle:
            run = []
            continue
        run.append(event.time)
        if len(run) >= k and run[-1] - run[-k] <= window:
            return True
    return False


def count_boot_loops(boot_events, k, window):
    """Number of disjoint groups of ``k`` consecutive non-completing boots within ``window``."""
    count = 0
    run = []
    for event in boot_events:
        if event.completed_cycle:
            run = []
            continue
        run.append(event.time)
        if len(run) >= k and run[-1] - run[-k] <= window:
            count += 1
            run = []
    return count


def tx_feasibility(bank, v_interrupt, v_min_operate, i_tx, airtime):
    required = (i_tx / 1000.0) * airtime
    available = deliverable_charge(bank, v_interrupt, v_min_operate)
    return Feasibility(feasible=available >= required, required=required, available=available)


def min_bank_capacitance(required, v_interrupt, v_min_operate):
    return required / (v_interrupt - v_min_operate)
