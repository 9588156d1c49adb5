import json
import tempfile
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.test import SimpleTestCase

from core.files import ResultWriteError, TraceFormatError, format_value, load_trace, write_csv
from core.scenario import (
    config_digest, list_presets, numeric_paths, parse_override, resolve_scenario, with_overrides,
)


class ResolveTests(SimpleTestCase):
    def test_defaults(self):
        sc = resolve_scenario({})
        self.assertEqual(sc.name, 'default')
        self.assertEqual(sc.radio.kind, 'lora')
        self.assertEqual(sc.main_comparator.v_on, 3.38)
        self.assertAlmostEqual(sc.radio_ufop.min_operating_v, 3.0)
        self.assertEqual(len(sc.digest), 64)

    def test_fsk_defaults_follow_kind(self):
        sc = resolve_scenario({'radio': {'kind': 'fsk'}})
        self.assertEqual(sc.radio.kind, 'fsk')
        self.assertEqual(sc.radio.bitrate, 38400.0)
        self.assertNotIn('spreading_factor', sc.config['radio'])

    def test_unknown_keys_are_errors(self):
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'bogus': 1, 'radio': {'bogus': 2}})
        self.assertIn('bogus', cm.exception.message_dict)
        self.assertIn('radio.bogus', cm.exception.message_dict)

    def test_every_violation_is_listed(self):
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'dt': -1, 'main_comparator': {'v_on': 3.0, 'v_off': 3.2},
                              'payload_len': 256, 'radio': {'tx_power': 30}})
        fields = cm.exception.message_dict
        for key in ('dt', 'main_comparator.v_off', 'payload_len', 'radio.tx_power'):
            self.assertIn(key, fields)

    def test_distance_inside_reference(self):
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'distance': 0.5})
        self.assertIn('distance', cm.exception.message_dict)

    def test_overrides_and_seed(self):
        sc = resolve_scenario('sec631-bench-16mA', overrides={'radio.tx_power': 8}, seed=42)
        self.assertEqual(sc.name, 'sec631-bench-16mA')
        self.assertEqual(sc.supply.mode, 'bench')
        self.assertEqual(sc.supply.current_limit, 16.0)
        self.assertEqual(sc.radio.tx_power, 8.0)
        self.assertEqual(sc.seed, 42)

    def test_missing_preset(self):
        with self.assertRaises(FileNotFoundError):
            resolve_scenario('no-such-preset')

    def test_shipped_presets_validate(self):
        names = list_presets()
        self.assertIn('fig10-nlos-pdr', names)
        for name in names:
            self.assertEqual(resolve_scenario(name).name, name)

    def test_digest(self):
        self.assertEqual(resolve_scenario({}).digest, resolve_scenario({}).digest)
        self.assertNotEqual(resolve_scenario({}).digest, resolve_scenario({}, seed=2).digest)
        self.assertEqual(config_digest({'a': 1, 'b': 2}), config_digest({'b': 2, 'a': 1}))

    def test_with_overrides(self):
        sc = resolve_scenario({})
        changed = with_overrides(sc, {'distance': 250.0}, seed=9)
        self.assertEqual(changed.distance, 250.0)
        self.assertEqual(changed.seed, 9)
        self.assertIn('radio.tx_power', numeric_paths(sc.config))
        with self.assertRaises(ImproperlyConfigured):
            with_overrides(sc, {'radio.nope': 1})

    def test_non_finite_numbers_are_rejected(self):
        overrides = {'payload_len': float('inf'), 'duration': float('inf'),
                     'dt': float('nan'), 'distance': float('nan')}
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({}, overrides=overrides)
        for key in overrides:
            self.assertIn(key, cm.exception.message_dict)
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'sweep_distances': [100.0, float('inf')],
                              'harvest': {'kind': 'trace', 'samples': [[0.0, float('nan')]]}})
        self.assertIn('sweep_distances', cm.exception.message_dict)
        self.assertIn('harvest.samples', cm.exception.message_dict)

    def test_rail_voltage(self):
        self.assertEqual(resolve_scenario({}).rail_voltage, 3.3)
        self.assertEqual(resolve_scenario('rail-3v0').rail_voltage, 3.0)
        for voltage in (1.5, 3.7):
            with self.assertRaises(ValidationError) as cm:
                resolve_scenario({'rail': {'voltage': voltage}})
            self.assertIn('rail.voltage', cm.exception.message_dict)

    def test_irradiance_factor_range(self):
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'harvest': {'irradiance_factor': 1.5}})
        self.assertIn('harvest.irradiance_factor', cm.exception.message_dict)

    def test_absent_receiver(self):
        self.assertEqual(resolve_scenario({'receiver': {'mode': 'absent'}}).receiver_mode, 'absent')

    def test_parse_override(self):
        self.assertEqual(parse_override('radio.tx_power=11'), ('radio.tx_power', 11))
        self.assertEqual(parse_override('name=field-test'), ('name', 'field-test'))
        self.assertEqual(parse_override('record_current=true'), ('record_current', True))
        with self.assertRaises(ValidationError):
            parse_override('no-equals-sign')

    def test_trace_path_is_relative_to_scenario(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, 'sun.csv').write_text('t_s,i_mA\n0,10\n60,20\n')
            Path(tmp, 'trace.json').write_text(json.dumps(
                {'harvest': {'kind': 'trace', 'trace_path': 'sun.csv'}}))
            sc = resolve_scenario(str(Path(tmp, 'trace.json')))
        self.assertEqual(sc.name, 'trace')
        self.assertEqual(sc.harvest.samples, ((0.0, 10.0), (60.0, 20.0)))

    def test_trace_without_samples(self):
        with self.assertRaises(ValidationError) as cm:
            resolve_scenario({'harvest': {'kind': 'trace'}})
        self.assertIn('harvest.samples', cm.exception.message_dict)


class TraceFileTests(SimpleTestCase):
    def load(self, text):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, 'trace.csv')
            path.write_text(text)
            return load_trace(path)

    def test_two_rows(self):
        trace = self.load('0,1.5\n10,2.5\n')
        self.assertEqual(len(trace.samples), 2)

    def test_header_only(self):
        with self.assertRaises(TraceFormatError):
            self.load('t_s,i_mA\n')

    def test_negative_current_reports_line(self):
        with self.assertRaises(TraceFormatError) as cm:
            self.load('t_s,i_mA\n0,1\n5,-2\n')
        self.assertEqual(cm.exception.line, 3)

    def test_non_finite_values_report_line(self):
        for text, line in (('t_s,i_mA\n0,nan\n', 2), ('0,1\n5,inf\n', 2), ('0,1\ninf,2\n', 2)):
            with self.assertRaises(TraceFormatError) as cm:
                self.load(text)
            self.assertEqual(cm.exception.line, line)

    def test_unsorted_times(self):
        with self.assertRaises(TraceFormatError) as cm:
            self.load('0,1\n5,2\n4,3\n')
        self.assertEqual(cm.exception.line, 3)

    def test_malformed_row(self):
        with self.assertRaises(TraceFormatError) as cm:
            self.load('0,1\nfive,2\n')
        self.assertEqual(cm.exception.line, 2)


class ResultFileTests(SimpleTestCase):
    def test_number_format(self):
        self.assertEqual(format_value(0.5), '0.500000000')
        self.assertEqual(format_value(6), '6')

    def test_header_only_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(Path(tmp, 'out', 'e.csv'), ('a', 'b'), [], 'abc')
            self.assertEqual(path.read_bytes(), b'# config_digest=abc\na,b\n')

    def test_unwritable_target(self):
        with tempfile.TemporaryDirectory() as tmp:
            blocker = Path(tmp, 'file')
            blocker.write_text('x')
            with self.assertRaises(ResultWriteError):
                write_csv(blocker / 'e.csv', ('a',), [], 'abc')
