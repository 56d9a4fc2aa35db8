"""
Result files for btn-sim
BTNFIELD snapshots, trajectory/ledger/sweep/verify CSV files and the run manifest
"""

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from btnsim.analysis import EnergyRecord, LemmaLedger
from btnsim.error_handlers import FieldFormatError, OutputError
from btnsim.grid import Grid, ScalarField


logger = logging.getLogger(__name__)


FIELD_MAGIC = 'BTNFIELD'
FIELD_VERSION = 'v1'

TRAJECTORY_COLUMNS = (
    't', 'E', 'dE_dt_est', 'mt_l2sq', 'grad_m_l2sq', 'm_l2gamma', 'grad_p_l2sq',
    'mgradp_l2sq', 'm_linf', 'dp_to_semitrivial_h1',
)
LEDGER_COLUMNS = (
    't', 'step_index', 'lap_p_ratio', 'lap_m_ratio', 'grad_lap_p_ratio',
    'max_lap_p_ratio', 'max_lap_m_ratio', 'max_grad_lap_p_ratio',
)
SWEEP_COLUMNS = ('kappa', 'm_inf_linf', 'mu_hat', 'r_squared', 'converged', 'steps')
VERIFY_COLUMNS = ('name', 'passed', 'required', 'elapsed', 'detail')


def _fmt(value: Any) -> str:
    # repr is the shortest round-trip form
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ===== FIELD SNAPSHOTS =====

def write_field(path: str, fld: ScalarField) -> str:
    """
    Write `BTNFIELD v1 nx ny lx ly` + newline, then nx*ny little-endian float64, row-major.

    Raises:
        OutputError: file could not be written
    """
    grid = fld.grid
    header = f"{FIELD_MAGIC} {FIELD_VERSION} {grid.nx} {grid.ny} {grid.lx!r} {grid.ly!r}\n"
    payload = np.ascontiguousarray(fld.values, dtype='<f8').tobytes(order='C')
    try:
        with open(path, 'wb') as f:
            f.write(header.encode('ascii'))
            f.write(payload)
    except OSError as e:
        raise OutputError(f"cannot write field {path}: {e}") from e
    return path


def read_field(path: str, boundary_zero: bool = False) -> ScalarField:
    """
    Read a BTNFIELD snapshot.

    Raises:
        FieldFormatError: bad header or payload size
        OSError: file missing or unreadable
    """
    with open(path, 'rb') as f:
        data = f.read()

    newline = data.find(b'\n')
    if newline < 0:
        raise FieldFormatError(f"{path}: missing header line")
    try:
        tokens = data[:newline].decode('ascii').split()
    except UnicodeDecodeError:
        raise FieldFormatError(f"{path}: header is not ASCII") from None

    if len(tokens) != 6 or tokens[0] != FIELD_MAGIC or tokens[1] != FIELD_VERSION:
        raise FieldFormatError(f"{path}: expected '{FIELD_MAGIC} {FIELD_VERSION} nx ny lx ly' header")
    try:
        grid = Grid(int(tokens[2]), int(tokens[3]), float(tokens[4]), float(tokens[5]))
    except ValueError as e:
        raise FieldFormatError(f"{path}: invalid grid in header: {e}") from e

    payload = data[newline + 1:]
    expected = grid.n_nodes * 8
    if len(payload) != expected:
        raise FieldFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")

    values = np.frombuffer(payload, dtype='<f8').reshape(grid.shape)
    return ScalarField(grid, values, boundary_zero)


# ===== TABLES =====

def _write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(value) for value in row])
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def trajectory_row(record: EnergyRecord) -> List[Any]:
    n = record.norms
    return [
        record.t, record.E, record.dE_dt_est, record.mt_l2sq, n.grad_m_l2sq, n.m_l2gamma,
        n.grad_p_l2sq, n.mgradp_l2sq, record.m_linf, record.dp_semitrivial,
    ]


def write_trajectory_csv(path: str, records: Sequence[EnergyRecord]) -> str:
    return _write_rows(path, TRAJECTORY_COLUMNS, (trajectory_row(r) for r in records))


def write_ledger_csv(path: str, ledger: LemmaLedger) -> str:
    return _write_rows(path, LEDGER_COLUMNS, (
        (row.t, row.step_index, row.lap_p_ratio, row.lap_m_ratio, row.grad_lap_p_ratio,
         row.max_lap_p_ratio, row.max_lap_m_ratio, row.max_grad_lap_p_ratio)
        for row in ledger.rows
    ))


def write_sweep_csv(path: str, rows: Sequence[Any]) -> str:
    """Rows are SweepRow-like objects with the SWEEP_COLUMNS attributes."""
    return _write_rows(path, SWEEP_COLUMNS, (
        [getattr(row, column) for column in SWEEP_COLUMNS] for row in rows
    ))


def write_verify_csv(path: str, results: Sequence[Any]) -> str:
    return _write_rows(path, VERIFY_COLUMNS, (
        [getattr(result, column) for column in VERIFY_COLUMNS] for result in results
    ))


def write_json(path: str, payload: Dict[str, Any]) -> str:
    try:
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=str)
            f.write('\n')
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def file_sha1(path: str) -> str:
    """SHA-1 of a file's content, read in chunks."""
    sha1 = hashlib.sha1()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            sha1.update(chunk)
    return sha1.hexdigest()


# ===== MANIFEST =====

@dataclass
class RunManifest:
    """What a command produced, from which scenario and software version."""
    command: str
    version: str
    grid_hash: str
    config_fingerprint: str
    config: str
    outputs: List[str] = field(default_factory=list)
    output_sha1: Dict[str, str] = field(default_factory=dict)
    duration: float = 0.0
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class OutputWriter:
    """
    Writes all files of one command into an output directory.

    Every path written through it is listed in the manifest.
    """

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"cannot create output directory {out_dir}: {e}") from e
        self.written: List[str] = []
        logger.debug(f"OutputWriter initialized at {self.out_dir}")

    def path(self, name: str) -> str:
        return str(self.out_dir / name)

    def track(self, paths: Iterable[str]) -> None:
        for p in paths:
            if p not in self.written:
                self.written.append(p)

    def snapshot(self, name: str, fld: ScalarField) -> str:
        path = write_field(self.path(name), fld)
        self.track([path])
        return path

    def trajectory(self, records: Sequence[EnergyRecord], name: str = 'trajectory.csv') -> str:
        path = write_trajectory_csv(self.path(name), records)
        self.track([path])
        return path

    def ledger(self, ledger: LemmaLedger, name: str = 'ledger.csv') -> str:
        path = write_ledger_csv(self.path(name), ledger)
        self.track([path])
        return path

    def sweep(self, rows: Sequence[Any], name: str = 'sweep.csv') -> str:
        path = write_sweep_csv(self.path(name), rows)
        self.track([path])
        return path

    def verify(self, results: Sequence[Any], name: str = 'verify.csv') -> str:
        path = write_verify_csv(self.path(name), results)
        self.track([path])
        return path

    def summary(self, name: str, payload: Dict[str, Any]) -> str:
        path = write_json(self.path(name), payload)
        self.track([path])
        return path

    def manifest(self, manifest: RunManifest, name: str = 'manifest.json') -> str:
        """
        Write manifest.json listing every tracked file with its SHA-1.

        Raises:
            OutputError: a listed file does not exist
        """
        missing = [p for p in self.written if not os.path.isfile(p)]
        if missing:
            raise OutputError(f"listed outputs missing: {', '.join(missing)}")

        manifest.outputs = list(self.written)
        manifest.output_sha1 = {p: file_sha1(p) for p in self.written}
        path = write_json(self.path(name), manifest.to_dict())
        logger.info(f"Wrote {len(self.written)} files + manifest to {self.out_dir}")
        return path
