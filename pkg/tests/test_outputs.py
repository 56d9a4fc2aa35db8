import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from btnsim.analysis import lemma_ratio_ledger
from btnsim.dynamics import run
from btnsim.error_handlers import FieldFormatError, OutputError
from btnsim.grid import Grid, ScalarField
from btnsim.outputs import (
    LEDGER_COLUMNS, SWEEP_COLUMNS, TRAJECTORY_COLUMNS, OutputWriter, RunManifest, file_sha1, read_csv,
    read_field, write_field,
)
from btnsim.steady import SweepRow


def test_field_file_layout(tmp_path, sines):
    grid = Grid(5, 4, lx=2.0)
    fld = ScalarField.from_function(grid, sines)
    path = write_field(str(tmp_path / 'f.btnf'), fld)
    data = open(path, 'rb').read()
    header, payload = data.split(b'\n', 1)
    assert header == b'BTNFIELD v1 5 4 2.0 1.0'
    assert len(payload) == 5 * 4 * 8
    assert_array_equal(np.frombuffer(payload, dtype='<f8'), fld.values.ravel())


def test_field_read_back(tmp_path, grid9, random_m):
    fld = random_m(grid9).m1
    path = write_field(str(tmp_path / 'm1.btnf'), fld)
    loaded = read_field(path, boundary_zero=True)
    assert loaded.grid == grid9
    assert_array_equal(loaded.values, fld.values)


def test_field_rejects_bad_header(tmp_path):
    path = tmp_path / 'bad.btnf'
    path.write_bytes(b'NOTAFIELD v1 3 3 1.0 1.0\n' + b'\0' * 72)
    with pytest.raises(FieldFormatError):
        read_field(str(path))


def test_field_rejects_truncated_payload(tmp_path):
    path = tmp_path / 'short.btnf'
    path.write_bytes(b'BTNFIELD v1 3 3 1.0 1.0\n' + b'\0' * 64)
    with pytest.raises(FieldFormatError):
        read_field(str(path))


def test_write_field_to_missing_directory(tmp_path, grid9):
    with pytest.raises(OutputError):
        write_field(str(tmp_path / 'missing' / 'f.btnf'), ScalarField.zeros(grid9))


def test_trajectory_and_ledger_csv(tmp_path, small_cfg):
    result = run(small_cfg)
    writer = OutputWriter(str(tmp_path))
    rows = read_csv(writer.trajectory(result.trajectory))
    assert list(rows[0].keys()) == list(TRAJECTORY_COLUMNS)
    assert len(rows) == len(result.trajectory)
    assert float(rows[-1]['E']) == result.trajectory[-1].E

    ledger_rows = read_csv(writer.ledger(lemma_ratio_ledger(result.trajectory, small_cfg.kappa)))
    assert list(ledger_rows[0].keys()) == list(LEDGER_COLUMNS)


def test_sweep_csv_booleans(tmp_path):
    row = SweepRow(kappa=1.0, m_inf_linf=0.5, mu_hat=2.0, r_squared=0.99, converged=True, steps=10)
    rows = read_csv(OutputWriter(str(tmp_path)).sweep([row]))
    assert list(rows[0].keys()) == list(SWEEP_COLUMNS)
    assert rows[0]['converged'] == 'true'
    assert rows[0]['steps'] == '10'


def test_manifest_lists_outputs_with_hashes(tmp_path, grid9):
    writer = OutputWriter(str(tmp_path / 'out'))
    field_path = writer.snapshot('p.btnf', ScalarField.zeros(grid9))
    writer.summary('summary.json', {'ok': True})
    manifest = RunManifest(command='run', version='0', grid_hash=grid9.fingerprint(),
                           config_fingerprint='abc', config='')
    path = writer.manifest(manifest)

    data = json.loads(open(path).read())
    assert data['outputs'] == [field_path, writer.path('summary.json')]
    assert data['output_sha1'][field_path] == file_sha1(field_path)


def test_manifest_rejects_missing_outputs(tmp_path):
    writer = OutputWriter(str(tmp_path))
    writer.track([str(tmp_path / 'ghost.csv')])
    manifest = RunManifest(command='run', version='0', grid_hash='', config_fingerprint='', config='')
    with pytest.raises(OutputError):
        writer.manifest(manifest)
