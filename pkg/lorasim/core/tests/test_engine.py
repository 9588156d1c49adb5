import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase

from core.engine import (
    CalibrationTarget, SimResult, calibrate_channel, config_differences, link_pdr, max_range,
    parse_grid, parse_range, power_overlap, run_scenario, sweep, write_result,
)
from core.phy import ChannelModel
from core.scenario import resolve_scenario


def closure_error(result):
    balance = (result.energy_harvested - result.energy_consumed - result.energy_shunted
               - result.energy_stored_delta)
    return abs(balance) / max(abs(result.energy_harvested), 1e-12)


class RunTests(SimpleTestCase):
    def test_zero_duration(self):
        result = run_scenario(resolve_scenario({'duration': 0}))
        self.assertEqual(result.packets_sent, 0)
        self.assertEqual(result.packets_delivered, 0)
        self.assertEqual(result.brownouts, 0)
        self.assertEqual(result.boot_loops_detected, 0)
        self.assertEqual(result.pdr, 0.0)
        self.assertEqual(result.event_log, ())

    def test_deterministic(self):
        sc = resolve_scenario('fig10-nlos-pdr', overrides={'duration': 25})
        self.assertEqual(run_scenario(sc), run_scenario(sc))

    def test_energy_closes_on_random_scenarios(self):
        rng = np.random.default_rng(11)
        for index in range(100):
            doc = {
                'duration': 3.0,
                'dt': 0.002,
                'duty_period': float(rng.uniform(1.0, 3.0)),
                'harvest': {
                    'kind': ['constant', 'diurnal'][index % 2],
                    'constant_current': float(rng.uniform(2.0, 80.0)),
                    'amplitude': float(rng.uniform(10.0, 80.0)),
                    'period': 8.0,
                },
                'main_cap': {'capacitance': float(rng.uniform(5e-5, 5e-4))},
                'radio_ufop': {'capacitance': float(rng.uniform(5e-5, 1e-3))},
                'receiver': {'mode': ['powered', 'harvested', 'absent'][index % 3]},
                'budget': {'search_timeout': float(rng.uniform(0.0, 1.0))},
            }
            if index % 10 == 9:
                doc['supply'] = {'mode': 'bench', 'current_limit': 16.0}
            result = run_scenario(resolve_scenario(doc))
            self.assertLessEqual(closure_error(result), 1e-6, doc)
            self.assertGreater(result.energy_harvested, 0.0)

    def test_halving_dt(self):
        sc = resolve_scenario('sec631-bench-16mA', overrides={'duration': 30})
        coarse = run_scenario(sc)
        fine = run_scenario(resolve_scenario('sec631-bench-16mA',
                                             overrides={'duration': 30, 'dt': 0.0005}))
        self.assertEqual(coarse.pdr, fine.pdr)
        self.assertEqual(coarse.packets_sent, fine.packets_sent)
        for name in ('energy_harvested', 'energy_consumed'):
            a, b = getattr(coarse, name), getattr(fine, name)
            self.assertLessEqual(abs(a - b) / a, 1e-3, name)

    def test_monte_carlo_pdr_matches_link_model(self):
        sc = resolve_scenario({
            'duration': 200.0, 'dt': 0.01, 'duty_period': 1.0,
            'supply': {'mode': 'bench', 'current_limit': 16.0},
            'channel': {'exponent': 3.0, 'shadowing_sigma': 6.0},
            'distance': 2358.0,
            'budget': {'search_timeout': 0.0},
        })
        result = run_scenario(sc)
        p = link_pdr(sc)
        self.assertGreater(result.packets_sent, 150)
        self.assertLessEqual(abs(result.pdr - p), 3 * math.sqrt(p * (1 - p) / result.packets_sent))

    def test_absent_receiver(self):
        overrides = {'duration': 12, 'record_current': True}
        alone = run_scenario(resolve_scenario(
            'sec631-bench-16mA', overrides={**overrides, 'receiver.mode': 'absent'}))
        paired = run_scenario(resolve_scenario('sec631-bench-16mA', overrides=overrides))
        self.assertEqual(alone.packets_sent, 2)
        self.assertEqual(alone.packets_delivered, 0)
        self.assertEqual(alone.acks_received, 0)
        self.assertIn(12.0, [current for _, current in alone.current_series])
        self.assertNotIn(12.0, [current for _, current in paired.current_series])
        self.assertGreater(alone.mean_source_current, paired.mean_source_current)

    def test_current_series(self):
        result = run_scenario(resolve_scenario('fig8-current-sweep', overrides={'duration': 2}))
        self.assertEqual(len(result.current_series), 400)
        self.assertIn(15.6, [current for _, current in result.current_series])


class WriteResultTests(SimpleTestCase):
    def test_files_and_formatting(self):
        result = SimResult(scenario='x', pdr=0.5, config_echo={'name': 'x'}, config_digest='d1')
        with tempfile.TemporaryDirectory() as tmp:
            write_result(result, tmp)
            events = Path(tmp, 'events.csv').read_text().splitlines()
            self.assertEqual(events, ['# config_digest=d1', 'time_s,node,event,seq'])
            summary = Path(tmp, 'summary.csv').read_text().splitlines()
            row = dict(zip(summary[1].split(','), summary[2].split(',')))
            self.assertEqual(row['pdr'], '0.500000000')
            self.assertFalse(Path(tmp, 'current.csv').exists())
            self.assertTrue(Path(tmp, 'config.resolved').exists())

    def test_same_result_writes_identical_bytes(self):
        result = run_scenario(resolve_scenario('sec631-bench-16mA', overrides={'duration': 12}))
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            write_result(result, a)
            write_result(run_scenario(resolve_scenario('sec631-bench-16mA',
                                                       overrides={'duration': 12})), b)
            for name in ('summary.csv', 'events.csv', 'config.resolved'):
                self.assertEqual(Path(a, name).read_bytes(), Path(b, name).read_bytes(), name)


class SweepTests(SimpleTestCase):
    def setUp(self):
        self.sc = resolve_scenario('fig11-los-range', overrides={'duration': 12, 'dt': 0.005})

    def test_empty_values(self):
        table = sweep(self.sc, 'radio.tx_power', [])
        self.assertEqual(table.rows, [])

    def test_power_sweep_rows_in_order(self):
        values = [5.0, 11.0, 17.0, 23.0]
        table = sweep(self.sc, 'radio.tx_power', values)
        self.assertEqual([row[0] for row in table.rows], values)
        pdrs = [row[2] for row in table.rows]
        self.assertEqual(pdrs, sorted(pdrs))

    def test_seeds_are_derived_from_base(self):
        table = sweep(self.sc, 'distance', [500.0], per_point_seeds=2)
        self.assertEqual([row[1] for row in table.seed_rows], [self.sc.seed, self.sc.seed + 1])
        self.assertEqual(table.rows[0][1], 2)

    def test_unknown_path(self):
        with self.assertRaises(ImproperlyConfigured) as cm:
            sweep(self.sc, 'radio.colour', [1])
        self.assertIn('radio.tx_power', str(cm.exception))


class LinkTests(SimpleTestCase):
    def test_max_range(self):
        self.assertEqual(max_range([100, 200, 300], [0.9, 0.5, 0.4], 0.5), 200)
        self.assertEqual(max_range([100, 200], [0.1, 0.2], 0.5), 0.0)

    def test_range_at_half_pdr_is_zero_margin_distance(self):
        sc = resolve_scenario({'channel': {'exponent': 3.0, 'shadowing_sigma': 6.0}, 'radio': {'kind': 'fsk'}})
        # 5 dBm - 25.2 dB - 30 log10(d) = -104 dBm
        d = 10 ** ((5 - 25.2 + 104) / 30)
        self.assertAlmostEqual(link_pdr(sc, d), 0.5)

    def test_power_overlap(self):
        lora = resolve_scenario({}).radio
        fsk = resolve_scenario({'radio': {'kind': 'fsk'}}).radio
        self.assertEqual(power_overlap(lora, fsk), [5, 6, 7, 8, 9, 10])
        self.assertEqual(power_overlap(lora, lora), list(range(5, 24)))

    def test_config_differences(self):
        a = resolve_scenario('fig10-nlos-pdr').config
        b = resolve_scenario('fig10-nlos-pdr-cc1101').config
        self.assertEqual(config_differences(a, b), [])
        c = resolve_scenario('sec631-bench-16mA').config
        self.assertIn('supply.mode', config_differences(a, c))

    def test_parse_range(self):
        self.assertEqual(parse_range('5,11,17'), [5.0, 11.0, 17.0])
        self.assertEqual(parse_range('100:500:100'), [100.0, 200.0, 300.0, 400.0, 500.0])
        self.assertEqual(parse_range(''), [])
        with self.assertRaises(ValueError):
            parse_range('5:1:1')


class CalibrationTests(SimpleTestCase):
    GRID = 'n=2:4:0.1,sigma=0:12:0.5'

    def test_recovers_known_channel(self):
        sc = resolve_scenario('fig10-nlos-pdr-cc1101')
        truth = ChannelModel(exponent=2.7, shadowing_sigma=4.0)
        target = CalibrationTarget(sc, 400.0, 5.0, link_pdr(sc, 400.0, 5.0, truth))
        fit = calibrate_channel([target], parse_grid(self.GRID))
        self.assertEqual(fit.x, (2.7, 4.0))
        self.assertLess(fit.fun, 1e-20)

    def test_single_point_grid(self):
        sc = resolve_scenario('fig10-nlos-pdr')
        fit = calibrate_channel([CalibrationTarget(sc, 315.0, 5.0, 0.2)], parse_grid('n=3,sigma=6'))
        self.assertEqual(fit.x, (3.0, 6.0))
        self.assertEqual(len(fit.grid), 1)

    def test_lora_lead_is_reproduced(self):
        lora = resolve_scenario('fig10-nlos-pdr')
        cc1101 = resolve_scenario('fig10-nlos-pdr-cc1101')
        targets = [
            CalibrationTarget(cc1101, 315.0, 5.0, 0.9299),
            CalibrationTarget(lora, 315.0, 5.0, 1.0),
        ]
        fit = calibrate_channel(targets, parse_grid(self.GRID))
        delta = link_pdr(lora, channel=fit.channel) - link_pdr(cc1101, channel=fit.channel)
        self.assertAlmostEqual(delta, 0.07, delta=0.01)

    def test_empty_targets(self):
        with self.assertRaises(ValueError):
            calibrate_channel([], parse_grid(self.GRID))
