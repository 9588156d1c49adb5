"""
Reading harvest traces and writing result files.

Result CSVs open with a ``# config_digest=<sha256>`` line, then the column
header, then one row per record. Numbers are written with a fixed number of
significant digits so two runs of the same config give identical bytes.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import NamedTuple

from django.conf import settings

logger = logging.getLogger(__name__)


class TraceFormatError(ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f'{path}:{line}: {message}')


class ResultWriteError(OSError):
    pass


class HarvestTrace(NamedTuple):
    path: str
    samples: tuple


def load_trace(path):
    """
    Read a harvest trace: ``t_s,i_mA`` rows.

    Blank lines and ``#`` comments are skipped, an optional header row is
    allowed. Values must be finite, times non-negative and strictly
    increasing, currents non-negative.
    """
    path = Path(path)
    samples = []
    with path.open(encoding='utf-8', newline='') as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or not ''.join(row).strip() or row[0].lstrip().startswith('#'):
                continue
            if len(row) != 2:
                raise TraceFormatError(path, line_no, f'expected 2 columns, got {len(row)}')
            try:
                t, current = float(row[0]), float(row[1])
            except ValueError:
                if not samples and line_no == 1:
                    continue
                raise TraceFormatError(path, line_no, f'not a number: {",".join(row)!r}')
            if not (math.isfinite(t) and math.isfinite(current)):
                raise TraceFormatError(path, line_no, f'not a finite number: {",".join(row)!r}')
            if t < 0 or current < 0:
                raise TraceFormatError(path, line_no, 'time and current must be >= 0')
            if samples and t <= samples[-1][0]:
                raise TraceFormatError(path, line_no, f'time {t} does not increase')
            samples.append((t, current))
    if not samples:
        raise TraceFormatError(path, 0, 'trace has no samples')
    logger.debug('loaded %d harvest samples from %s', len(samples), path)
    return HarvestTrace(path=str(path), samples=tuple(samples))


def format_value(value, digits=None):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        digits = digits or settings.NODESIM['SIGNIFICANT_DIGITS']
        return format(value, f'#.{digits}g')
    return str(value)


def _write(path, writer):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8', newline='') as f:
            writer(f)
    except OSError as exc:
        raise ResultWriteError(f'cannot write {path}: {exc.strerror or exc}') from exc
    logger.info('wrote %s', path)
    return path


def write_csv(path, header, rows, digest):
    def writer(f):
        f.write(f'# config_digest={digest}\n')
        out = csv.writer(f, lineterminator='\n')
        out.writerow(header)
        for row in rows:
            out.writerow([format_value(value) for value in row])
    return _write(path, writer)


def write_json(path, document):
    def writer(f):
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    return _write(path, writer)


def write_resolved_config(out_dir, config, digest):
    return write_json(Path(out_dir) / 'config.resolved', {'config_digest': digest, 'config': config})


def read_csv_rows(path):
    """Rows of a result or targets CSV as dicts, skipping ``#`` lines."""
    path = Path(path)
    with path.open(encoding='utf-8', newline='') as f:
        lines = [line for line in f if not line.lstrip().startswith('#')]
    return list(csv.DictReader(lines))
