"""
Energy storage and gating for a batteryless node.

Currents are in milliamps, charge in coulombs, voltages in volts and
times in seconds. Every function here is a pure function of its inputs;
the simulation engine threads the returned values through its loop.
"""
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np
from django.core.exceptions import ImproperlyConfigured

HARVEST_KINDS = ('constant', 'trace', 'diurnal')


@dataclass(frozen=True)
class CapacitorState:
    capacitance: float
    voltage: float
    clamp_voltage: float
    shunted_charge: float = 0.0
    # charge a load asked for while the capacitor was already empty
    deficit_charge: float = 0.0

    @property
    def stored_energy(self):
        return 0.5 * self.capacitance * self.voltage ** 2


@dataclass(frozen=True)
class HarvestProfile:
    kind: str = 'constant'
    constant_current: float = 0.0
    samples: tuple = ()
    amplitude: float = 0.0
    period: float = 86400.0
    scale: float = 1.0
    # fraction of full-sun output reaching the panel; indoor presets use 0.05
    irradiance_factor: float = 1.0

    @cached_property
    def _trace_arrays(self):
        times = np.array([s[0] for s in self.samples], dtype=float)
        currents = np.array([s[1] for s in self.samples], dtype=float)
        return times, currents


@dataclass(frozen=True)
class HysteresisComparator:
    v_on: float
    v_off: float
    output: bool = False


@dataclass(frozen=True)
class UfopUnit:
    """A dedicated bank, charging path and output regulator for one peripheral."""

    name: str
    charge_start_v: float
    interrupt_v: float
    bank: CapacitorState
    gate_closed: bool = False
    pass_limit: float = 20.0
    regulated_out_v: float = 3.0
    dropout_v: float = 0.1
    charge_current: float = 20.0

    @property
    def min_operating_v(self):
        return self.regulated_out_v + self.dropout_v

    @property
    def regulator_ok(self):
        return self.bank.voltage >= self.min_operating_v


class UfopStep(NamedTuple):
    unit: UfopUnit
    interrupt: bool
    delivered: float
    charge_current: float
    under_supplied: bool
    regulator_ok: bool


class ChargeFlow(NamedTuple):
    """Energy moved through one capacitor during one step, in joules."""

    energy_in: float
    energy_out: float
    energy_shunted: float


def harvester_current(profile, t):
    if t < 0:
        raise ValueError(f'harvest time must be >= 0, got {t}')
    if profile.kind == 'constant':
        current = profile.constant_current
    elif profile.kind == 'trace':
        if not profile.samples:
            raise ImproperlyConfigured('harvest trace has no samples')
        times, currents = profile._trace_arrays
        if t < times[0] or t > times[-1]:
            current = 0.0
        else:
            index = int(np.searchsorted(times, t, side='right')) - 1
            current = float(currents[index])
    elif profile.kind == 'diurnal':
        current = profile.amplitude * max(0.0, math.sin(2.0 * math.pi * t / profile.period))
    else:
        raise ImproperlyConfigured(f'unknown harvest kind {profile.kind!r}')
    return profile.scale * profile.irradiance_factor * current


def capacitor_step(cap, net_current, dt):
    """Advance an ideal capacitor by ``dt`` with ``net_current`` held constant."""
    unclamped = cap.voltage + (net_current / 1000.0) * dt / cap.capacitance
    shunted = cap.shunted_charge
    deficit = cap.deficit_charge
    if unclamped > cap.clamp_voltage:
        shunted += (unclamped - cap.clamp_voltage) * cap.capacitance
        voltage = cap.clamp_voltage
    elif unclamped < 0.0:
        deficit += -unclamped * cap.capacitance
        voltage = 0.0
    else:
        voltage = unclamped
    return replace(cap, voltage=voltage, shunted_charge=shunted, deficit_charge=deficit)


def charge_flow(before, after, charge_in, charge_out):
    """
    Split one capacitor step into energies at the step's mean voltage.

    With the mean voltage the split closes exactly:
    energy_in - energy_out - energy_shunted == after.stored_energy - before.stored_energy.
    ``energy_out`` only counts charge that was actually delivered.
    """
    v_mid = 0.5 * (before.voltage + after.voltage)
    shunted = after.shunted_charge - before.shunted_charge
    deficit = after.deficit_charge - before.deficit_charge
    return ChargeFlow(
        energy_in=charge_in * v_mid,
        energy_out=(charge_out - deficit) * v_mid,
        energy_shunted=shunted * v_mid,
    )


def comparator_step(comp, v):
    if v >= comp.v_on:
        output = True
    elif v <= comp.v_off:
        output = False
    else:
        output = comp.output
    if output == comp.output:
        return comp
    return replace(comp, output=output)


def ufop_step(unit, rail_v, load_demand, dt, supply_limit=math.inf):
    """
    Charge and discharge one UFoP bank for ``dt``.

    ``supply_limit`` caps the current the rail can hand to this unit in this
    step; the engine uses it to keep charging from dragging the rail below
    the unit's charge-start level.
    """
    bank = unit.bank
    regulator_ok = unit.regulator_ok

    delivered = 0.0
    under_supplied = False
    if unit.gate_closed and load_demand > 0:
        if regulator_ok:
            delivered = min(load_demand, unit.pass_limit)
        under_supplied = delivered < load_demand

    charge = 0.0
    if rail_v >= unit.charge_start_v:
        target = min(rail_v, bank.clamp_voltage)
        room = bank.capacitance * (target - bank.voltage) + (delivered / 1000.0) * dt
        if room > 0:
            charge = min(unit.pass_limit, unit.charge_current, max(supply_limit, 0.0),
                         room * 1000.0 / dt)

    bank = capacitor_step(bank, charge - delivered, dt)
    unit = replace(unit, bank=bank)
    return UfopStep(
        unit=unit,
        interrupt=bank.voltage >= unit.interrupt_v,
        delivered=delivered,
        charge_current=charge,
        under_supplied=under_supplied,
        regulator_ok=regulator_ok and unit.regulator_ok,
    )


def deliverable_charge(bank, v_hi, v_lo):
    if v_lo >= v_hi:
        raise ValueError(f'empty charge window: v_lo={v_lo} V is not below v_hi={v_hi} V')
    return bank.capacitance * (v_hi - v_lo)
