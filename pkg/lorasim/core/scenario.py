"""
Scenario documents: defaults, file loading, ``--set`` overrides and
validation into the typed ``Scenario`` the engine runs.
"""
import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured, ValidationError

from .energy import HARVEST_KINDS, CapacitorState, HarvestProfile, HysteresisComparator, UfopUnit
from .files import load_trace
from .node import DEFAULT_DRAWS, CurrentBudget, NodePhase
from .phy import (
    AVERAGE_CURRENT_FRACTION, CC1101_CURRENT_CURVE, DEFAULT_SNR_REQUIRED, LORA_BANDWIDTHS,
    LORA_CURRENT_CURVE, MAX_LORA_PAYLOAD, ChannelModel, FskConfig, LoRaConfig,
)

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64 - 1

LORA_DEFAULTS = {
    'kind': 'lora',
    'spreading_factor': 7,
    'bandwidth': 125000.0,
    'coding_rate': 1,
    'preamble_symbols': 8,
    'explicit_header': True,
    'crc_on': True,
    'low_data_rate_opt': False,
    'tx_power': 5.0,
    'frequency': 433e6,
    'noise_figure': 6.0,
    'snr_required': {str(sf): snr for sf, snr in DEFAULT_SNR_REQUIRED.items()},
    'current_curve': [list(point) for point in LORA_CURRENT_CURVE],
    'average_current_fraction': AVERAGE_CURRENT_FRACTION,
    'min_supply_v': 3.3,
}

FSK_DEFAULTS = {
    'kind': 'fsk',
    'bitrate': 38400.0,
    'overhead_bytes': 12,
    'tx_power': 5.0,
    'sensitivity': -104.0,
    'frequency': 433e6,
    'current_curve': [list(point) for point in CC1101_CURRENT_CURVE],
    'average_current_fraction': AVERAGE_CURRENT_FRACTION,
    'min_supply_v': 1.8,
}

RADIO_DEFAULTS = {'lora': LORA_DEFAULTS, 'fsk': FSK_DEFAULTS}


def _ufop_defaults(capacitance, charge_start_v, interrupt_v, regulated_out_v):
    return {
        'capacitance': capacitance,
        'clamp_voltage': 5.1,
        'initial_voltage': 0.0,
        'charge_start_v': charge_start_v,
        'interrupt_v': interrupt_v,
        'pass_limit': 20.0,
        'charge_current': 20.0,
        'regulated_out_v': regulated_out_v,
        'dropout_v': 0.1,
    }


DEFAULTS = {
    'name': 'default',
    'description': '',
    'duration': 60.0,
    'dt': 0.001,
    'seed': 1,
    'supply': {'mode': 'harvested', 'voltage': 3.7, 'current_limit': 16.0},
    # regulated level the MCU and peripherals run from
    'rail': {'voltage': 3.3},
    'harvest': {
        'kind': 'constant',
        'constant_current': 70.0,
        'samples': [],
        'trace_path': '',
        'amplitude': 70.0,
        'period': 86400.0,
        'scale': 1.0,
        'irradiance_factor': 1.0,
    },
    'main_cap': {'capacitance': 1e-4, 'clamp_voltage': 5.1, 'initial_voltage': 0.0},
    'main_comparator': {'v_on': 3.38, 'v_off': 3.05},
    'radio_ufop': _ufop_defaults(1e-4, 3.3, 3.5, 2.9),
    'sensor_ufop': _ufop_defaults(22e-6, 3.2, 3.3, 1.8),
    'radio': LORA_DEFAULTS,
    'channel': {
        'd0': 1.0,
        'pl0': 25.2,
        'exponent': 2.0,
        'shadowing_sigma': 2.0,
        'tx_gain': 0.0,
        'rx_gain': 0.0,
    },
    'distance': 100.0,
    'duty_period': 10.0,
    'budget': {
        'draws': {str(phase): draw for phase, draw in DEFAULT_DRAWS.items()},
        'boot_duration': 0.1,
        'sense_duration': 0.2,
        'sensor_current': 2.0,
        'ack_bytes': 5,
        'search_timeout': 1.0,
    },
    'payload_len': 20,
    'receiver': {'mode': 'powered'},
    'boot_loop': {'k': 3, 'window': 60.0},
    'record_current': False,
    'current_sample_every': 10,
    'sweep_distances': [float(d) for d in range(100, 2001, 100)],
}

RECEIVER_MODES = ('powered', 'harvested', 'absent')

# dict-valued keys replaced wholesale instead of merged key by key
FREEFORM_KEYS = {'radio.snr_required'}


@dataclass(frozen=True)
class SupplyConfig:
    mode: str = 'harvested'
    voltage: float = 3.7
    current_limit: float = 16.0


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    dt: float
    seed: int
    supply: SupplyConfig
    rail_voltage: float
    harvest: HarvestProfile
    main_cap: CapacitorState
    main_comparator: HysteresisComparator
    radio_ufop: UfopUnit
    sensor_ufop: UfopUnit
    radio: object
    channel: ChannelModel
    distance: float
    duty_period: float
    budget: CurrentBudget
    payload_len: int
    ack_bytes: int
    receiver_mode: str
    boot_loop_k: int
    boot_loop_window: float
    record_current: bool
    current_sample_every: int
    sweep_distances: tuple
    config: dict
    source_dir: str = '.'
    description: str = ''

    @property
    def digest(self):
        return config_digest(self.config)


def config_digest(config):
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def find_scenario(name):
    """Resolve a scenario argument to a file: an existing path or a shipped preset name."""
    path = Path(name)
    if path.is_file():
        return path
    presets = Path(settings.NODESIM['PRESETS_DIR'])
    for candidate in (presets / name, presets / f'{name}.json'):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f'scenario {name!r} is neither a file nor a preset in {presets}')


def list_presets():
    return sorted(p.stem for p in Path(settings.NODESIM['PRESETS_DIR']).glob('*.json'))


def read_document(path):
    path = Path(path)
    try:
        with path.open(encoding='utf-8') as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError({'document': [f'{path}: invalid JSON at line {exc.lineno}: {exc.msg}']})
    if not isinstance(doc, dict):
        raise ValidationError({'document': [f'{path}: top level must be an object']})
    return doc


def parse_override(text):
    """``key=value`` → (key, value); the value is JSON when it parses, else a string."""
    key, sep, raw = text.partition('=')
    if not sep or not key.strip():
        raise ValidationError({'--set': [f'expected key=value, got {text!r}']})
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(doc, overrides):
    doc = copy.deepcopy(doc)
    for key, value in overrides.items():
        parts = key.split('.')
        node = doc
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return doc


def _merge(defaults, doc, prefix, errors):
    merged = copy.deepcopy(defaults)
    for key, value in doc.items():
        path = f'{prefix}{key}'
        if key not in defaults:
            errors.setdefault(path, []).append('unknown key')
            continue
        if isinstance(defaults[key], dict) and path not in FREEFORM_KEYS:
            if not isinstance(value, dict):
                errors.setdefault(path, []).append('must be an object')
                continue
            merged[key] = _merge(defaults[key], value, f'{path}.', errors)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def merge_with_defaults(doc, errors=None):
    """Overlay ``doc`` on the defaults. Unknown keys raise unless an ``errors`` dict collects them."""
    collect = errors is not None
    errors = {} if errors is None else errors
    defaults = copy.deepcopy(DEFAULTS)
    radio = doc.get('radio')
    radio_kind = radio.get('kind', 'lora') if isinstance(radio, dict) else 'lora'
    if not isinstance(radio_kind, str) or radio_kind not in RADIO_DEFAULTS:
        errors['radio.kind'] = [f'must be one of {sorted(RADIO_DEFAULTS)}']
        radio_kind = 'lora'
    defaults['radio'] = copy.deepcopy(RADIO_DEFAULTS[radio_kind])
    merged = _merge(defaults, doc, '', errors)
    merged['radio']['kind'] = radio_kind
    if errors and not collect:
        raise ValidationError(errors)
    return merged


def _resolve(doc, source_dir):
    errors = {}
    merged = merge_with_defaults(doc, errors)
    try:
        scenario = build_scenario(merged, source_dir)
    except ValidationError as exc:
        for field, messages in exc.message_dict.items():
            errors.setdefault(field, []).extend(messages)
    if errors:
        raise ValidationError(errors)
    return scenario


def numeric_paths(config, prefix=''):
    paths = []
    for key, value in config.items():
        path = f'{prefix}{key}'
        if isinstance(value, dict):
            paths.extend(numeric_paths(value, f'{path}.'))
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            paths.append(path)
    return paths


def _finite(value):
    try:
        return math.isfinite(value)
    except OverflowError:
        return False


class _Checker:
    """Collects every violated field before raising one ValidationError."""

    def __init__(self):
        self.errors = {}

    def fail(self, path, message):
        self.errors.setdefault(path, []).append(message)

    def number(self, config, path, low=None, high=None, low_open=False, integer=False):
        value = config
        for part in path.split('.'):
            value = value[part]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, 'must be a number')
            return None
        if not _finite(value):
            self.fail(path, 'must be a finite number')
            return None
        if integer and int(value) != value:
            self.fail(path, 'must be an integer')
            return None
        if low is not None and (value <= low if low_open else value < low):
            self.fail(path, f'must be {">" if low_open else ">="} {low}')
        if high is not None and value > high:
            self.fail(path, f'must be <= {high}')
        return int(value) if integer else float(value)

    def flag(self, config, path):
        value = config
        for part in path.split('.'):
            value = value[part]
        if not isinstance(value, bool):
            self.fail(path, 'must be true or false')
            return False
        return value

    def choice(self, config, path, choices):
        value = config
        for part in path.split('.'):
            value = value[part]
        if value not in choices:
            self.fail(path, f'must be one of {list(choices)}')
        return value

    def pairs(self, config, path, minimum=0):
        value = config
        for part in path.split('.'):
            value = value[part]
        if not isinstance(value, list):
            self.fail(path, 'must be a list of [x, y] pairs')
            return ()
        points = []
        for index, point in enumerate(value):
            if (not isinstance(point, (list, tuple)) or len(point) != 2
                    or any(isinstance(v, bool) or not isinstance(v, (int, float))
                           or not _finite(v) for v in point)):
                self.fail(path, f'entry {index} must be a pair of finite numbers')
                return ()
            points.append((float(point[0]), float(point[1])))
        if len(points) < minimum:
            self.fail(path, f'needs at least {minimum} points')
        if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
            self.fail(path, 'x values must be strictly increasing')
        if any(p[1] < 0 for p in points):
            self.fail(path, 'y values must be >= 0')
        return tuple(points)


def _capacitor(check, config, key):
    capacitance = check.number(config, f'{key}.capacitance', 0, low_open=True)
    clamp = check.number(config, f'{key}.clamp_voltage', 0, low_open=True)
    initial = check.number(config, f'{key}.initial_voltage', 0)
    if None not in (clamp, initial) and initial > clamp:
        check.fail(f'{key}.initial_voltage', 'must not exceed clamp_voltage')
    return capacitance, clamp, initial


def _ufop(check, config, key, name):
    capacitance, clamp, initial = _capacitor(check, config, key)
    start = check.number(config, f'{key}.charge_start_v', 0)
    interrupt = check.number(config, f'{key}.interrupt_v', 0)
    if None not in (start, interrupt) and start >= interrupt:
        check.fail(f'{key}.charge_start_v', 'must be below interrupt_v')
    pass_limit = check.number(config, f'{key}.pass_limit', 0, low_open=True)
    charge_current = check.number(config, f'{key}.charge_current', 0)
    regulated = check.number(config, f'{key}.regulated_out_v', 0)
    dropout = check.number(config, f'{key}.dropout_v', 0)
    if check.errors:
        return None
    return UfopUnit(
        name=name,
        charge_start_v=start,
        interrupt_v=interrupt,
        bank=CapacitorState(capacitance=capacitance, voltage=initial, clamp_voltage=clamp),
        pass_limit=pass_limit,
        regulated_out_v=regulated,
        dropout_v=dropout,
        charge_current=charge_current,
    )


def _radio(check, config):
    kind = config['radio']['kind']
    curve = check.pairs(config, 'radio.current_curve', minimum=2)
    tx_power = check.number(config, 'radio.tx_power')
    fraction = check.number(config, 'radio.average_current_fraction', 0, 1, low_open=True)
    min_supply = check.number(config, 'radio.min_supply_v', 0, low_open=True)
    frequency = check.number(config, 'radio.frequency', 0, low_open=True)
    cls = LoRaConfig if kind == 'lora' else FskConfig
    low, high = cls.power_range
    if tx_power is not None and not low <= tx_power <= high:
        check.fail('radio.tx_power', f'must be within [{low}, {high}] dBm for {kind}')
    if curve and tx_power is not None and not curve[0][0] <= tx_power <= curve[-1][0]:
        check.fail('radio.current_curve', f'does not cover tx_power {tx_power} dBm')

    if kind == 'lora':
        sf = check.number(config, 'radio.spreading_factor', 7, 12, integer=True)
        bandwidth = check.number(config, 'radio.bandwidth', 0, low_open=True)
        if bandwidth is not None and bandwidth not in LORA_BANDWIDTHS:
            check.fail('radio.bandwidth', f'must be one of {list(LORA_BANDWIDTHS)}')
        cr = check.number(config, 'radio.coding_rate', 1, 4, integer=True)
        preamble = check.number(config, 'radio.preamble_symbols', 0, integer=True)
        flags = {name: check.flag(config, f'radio.{name}')
                 for name in ('explicit_header', 'crc_on', 'low_data_rate_opt')}
        noise_figure = check.number(config, 'radio.noise_figure')
        snr = config['radio']['snr_required']
        if not isinstance(snr, dict):
            check.fail('radio.snr_required', 'must be an object of SF → dB')
            snr = {}
        snr_required = {}
        for key, value in snr.items():
            try:
                snr_required[int(key)] = float(value)
                if isinstance(value, bool) or not _finite(snr_required[int(key)]):
                    raise ValueError(value)
            except (TypeError, ValueError):
                check.fail('radio.snr_required', f'entry {key!r} must map an integer SF to dB')
        if sf is not None and sf not in snr_required:
            check.fail('radio.snr_required', f'has no entry for SF{sf}')
        if check.errors:
            return None
        return LoRaConfig(
            spreading_factor=sf, bandwidth=bandwidth, coding_rate=cr, preamble_symbols=preamble,
            tx_power=tx_power, frequency=frequency, noise_figure=noise_figure,
            snr_required=snr_required, current_curve=curve,
            average_current_fraction=fraction, min_supply_v=min_supply, **flags,
        )

    bitrate = check.number(config, 'radio.bitrate', 0, low_open=True)
    overhead = check.number(config, 'radio.overhead_bytes', 0, integer=True)
    sensitivity = check.number(config, 'radio.sensitivity')
    if check.errors:
        return None
    return FskConfig(
        bitrate=bitrate, overhead_bytes=overhead, tx_power=tx_power, sensitivity=sensitivity,
        frequency=frequency, current_curve=curve, average_current_fraction=fraction,
        min_supply_v=min_supply,
    )


def _harvest(check, config, source_dir):
    kind = check.choice(config, 'harvest.kind', HARVEST_KINDS)
    constant = check.number(config, 'harvest.constant_current', 0)
    amplitude = check.number(config, 'harvest.amplitude', 0)
    period = check.number(config, 'harvest.period', 0, low_open=True)
    scale = check.number(config, 'harvest.scale', 0)
    irradiance = check.number(config, 'harvest.irradiance_factor', 0, 1)
    samples = check.pairs(config, 'harvest.samples')
    trace_path = config['harvest']['trace_path']
    if not isinstance(trace_path, str):
        check.fail('harvest.trace_path', 'must be a string')
        trace_path = ''
    if kind == 'trace' and not samples:
        if not trace_path:
            check.fail('harvest.samples', 'trace harvest needs samples or trace_path')
        else:
            path = Path(trace_path)
            if not path.is_absolute():
                path = Path(source_dir) / path
            try:
                samples = load_trace(path).samples
            except (OSError, ValueError) as exc:
                check.fail('harvest.trace_path', str(exc))
    if check.errors:
        return None
    return HarvestProfile(kind=kind, constant_current=constant, samples=tuple(samples),
                          amplitude=amplitude, period=period, scale=scale,
                          irradiance_factor=irradiance)


def build_scenario(config, source_dir='.'):
    """Validate a fully merged config and build the typed scenario."""
    check = _Checker()
    duration = check.number(config, 'duration', 0)
    dt = check.number(config, 'dt', 0, low_open=True)
    if None not in (duration, dt) and 0 < duration < dt:
        check.fail('duration', 'must be 0 or at least dt')
    seed = check.number(config, 'seed', 0, MAX_SEED, integer=True)

    mode = check.choice(config, 'supply.mode', ('harvested', 'bench'))
    supply_voltage = check.number(config, 'supply.voltage', 0, low_open=True)
    current_limit = check.number(config, 'supply.current_limit', 0, low_open=True)
    rail_voltage = check.number(config, 'rail.voltage', 1.8, 3.6)

    harvest = _harvest(check, config, source_dir)
    capacitance, clamp, initial = _capacitor(check, config, 'main_cap')
    v_on = check.number(config, 'main_comparator.v_on', 0)
    v_off = check.number(config, 'main_comparator.v_off', 0)
    if None not in (v_on, v_off) and v_off >= v_on:
        check.fail('main_comparator.v_off', 'must be strictly below v_on')

    radio_ufop = _ufop(check, config, 'radio_ufop', 'radio')
    sensor_ufop = _ufop(check, config, 'sensor_ufop', 'sensor')
    radio = _radio(check, config)

    d0 = check.number(config, 'channel.d0', 0, low_open=True)
    channel_values = {
        'pl0': check.number(config, 'channel.pl0'),
        'exponent': check.number(config, 'channel.exponent', 0, low_open=True),
        'shadowing_sigma': check.number(config, 'channel.shadowing_sigma', 0),
        'tx_gain': check.number(config, 'channel.tx_gain'),
        'rx_gain': check.number(config, 'channel.rx_gain'),
    }
    distance = check.number(config, 'distance', d0 if d0 is not None else 0)
    sweep_distances = config['sweep_distances']
    if not isinstance(sweep_distances, list) or any(
            isinstance(d, bool) or not isinstance(d, (int, float)) or not _finite(d)
            for d in sweep_distances):
        check.fail('sweep_distances', 'must be a list of finite numbers')
        sweep_distances = []
    elif d0 is not None and any(d < d0 for d in sweep_distances):
        check.fail('sweep_distances', f'every distance must be >= d0 ({d0} m)')

    duty_period = check.number(config, 'duty_period', 0, low_open=True)
    draws = {}
    for phase in NodePhase:
        draws[phase] = check.number(config, f'budget.draws.{phase.value}', 0)
    if None not in (draws[NodePhase.SLEEP], draws[NodePhase.SEARCH_IDLE]) \
            and draws[NodePhase.SLEEP] > draws[NodePhase.SEARCH_IDLE]:
        check.fail('budget.draws.sleep', 'must not exceed the search_idle draw')
    boot_duration = check.number(config, 'budget.boot_duration', 0, low_open=True)
    sense_duration = check.number(config, 'budget.sense_duration', 0, low_open=True)
    sensor_current = check.number(config, 'budget.sensor_current', 0)
    search_timeout = check.number(config, 'budget.search_timeout', 0)
    ack_bytes = check.number(config, 'budget.ack_bytes', 0, MAX_LORA_PAYLOAD, integer=True)
    if None not in (dt, boot_duration, sense_duration) and dt > min(boot_duration, sense_duration) / 2:
        check.fail('dt', 'must be at most half of the shorter of boot_duration and sense_duration')

    payload_high = MAX_LORA_PAYLOAD if config['radio']['kind'] == 'lora' else None
    payload_len = check.number(config, 'payload_len', 0, payload_high, integer=True)
    receiver_mode = check.choice(config, 'receiver.mode', RECEIVER_MODES)
    boot_loop_k = check.number(config, 'boot_loop.k', 2, integer=True)
    boot_loop_window = check.number(config, 'boot_loop.window', 0, low_open=True)
    record_current = check.flag(config, 'record_current')
    sample_every = check.number(config, 'current_sample_every', 1, integer=True)
    if not isinstance(config['name'], str):
        check.fail('name', 'must be a string')
    if not isinstance(config['description'], str):
        check.fail('description', 'must be a string')

    if check.errors:
        raise ValidationError(check.errors)

    return Scenario(
        name=config['name'],
        duration=duration,
        dt=dt,
        seed=seed,
        supply=SupplyConfig(mode=mode, voltage=supply_voltage, current_limit=current_limit),
        rail_voltage=rail_voltage,
        harvest=harvest,
        main_cap=CapacitorState(capacitance=capacitance, voltage=initial, clamp_voltage=clamp),
        main_comparator=HysteresisComparator(v_on=v_on, v_off=v_off),
        radio_ufop=radio_ufop,
        sensor_ufop=sensor_ufop,
        radio=radio,
        channel=ChannelModel(d0=d0, **channel_values),
        distance=distance,
        duty_period=duty_period,
        budget=CurrentBudget(draws=draws, boot_duration=boot_duration,
                             sense_duration=sense_duration, sensor_current=sensor_current,
                             search_timeout=search_timeout),
        payload_len=payload_len,
        ack_bytes=ack_bytes,
        receiver_mode=receiver_mode,
        boot_loop_k=boot_loop_k,
        boot_loop_window=boot_loop_window,
        record_current=record_current,
        current_sample_every=sample_every,
        sweep_distances=tuple(float(d) for d in sweep_distances),
        config=config,
        source_dir=str(source_dir),
        description=config['description'],
    )


def resolve_scenario(source, overrides=None, seed=None):
    """
    Load and validate a scenario.

    ``source`` is a path, a preset name or an already parsed document.
    Overrides are applied on the raw document before defaults are merged,
    so an override can switch ``radio.kind`` too.
    """
    if isinstance(source, dict):
        doc, source_dir = source, '.'
    else:
        path = find_scenario(str(source))
        doc, source_dir = read_document(path), path.parent
        if 'name' not in doc:
            doc = {**doc, 'name': path.stem}
    doc = apply_overrides(doc, dict(overrides or {}))
    if seed is not None:
        doc = apply_overrides(doc, {'seed': seed})
    scenario = _resolve(doc, source_dir)
    logger.debug('resolved scenario %s (%s)', scenario.name, scenario.digest[:12])
    return scenario


def with_overrides(scenario, overrides, seed=None):
    """A copy of ``scenario`` with dotted-path overrides applied to its resolved config."""
    unknown = [key for key in overrides if key not in numeric_paths(scenario.config)
               and not _path_exists(scenario.config, key)]
    if unknown:
        raise ImproperlyConfigured(
            f'unknown scenario path(s) {unknown}; valid numeric paths: '
            f'{", ".join(numeric_paths(scenario.config))}'
        )
    doc = apply_overrides(scenario.config, overrides)
    if seed is not None:
        doc = apply_overrides(doc, {'seed': seed})
    return _resolve(doc, scenario.source_dir)


def _path_exists(config, key):
    node = config
    for part in key.split('.'):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True
