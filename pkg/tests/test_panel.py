# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import io
import math

import numpy as np
import pytest

from matfac_o_matic.errors import ValidationError
from matfac_o_matic.model.panel import (CountPanel, load_panel,
                                        panel_digest, panel_from_arrays,
                                        to_log_panel, write_panel)

FULL = '''population,year,age,count
AT,2000,0,3
AT,2000,1,4
AT,2001,0,5
AT,2001,1,6
DE,2000,0,7
DE,2000,1,8
DE,2001,0,9
DE,2001,1,10
'''


def _csv(text):
    return io.StringIO(text)


def test_complete_grid():
    panel = load_panel(_csv(FULL))
    assert panel.dims == (2, 2, 2)
    assert panel.mask.all()
    assert panel.population_labels == ('AT', 'DE')
    assert panel.year_labels == (2000, 2001)
    assert panel.age_labels == (0, 1)
    assert panel.counts[1, 1, 0] == 9
    assert (panel.offsets == 1.0).all()


def test_absent_row_is_masked():
    text = FULL.replace('DE,2001,0,9\n', '')
    panel = load_panel(_csv(text))
    assert panel.dims == (2, 2, 2)
    assert not panel.mask[1, 1, 0]
    assert panel.counts[1, 1, 0] == 0
    assert panel.n_observed == 7


def test_offset_column_passes_through():
    lines = FULL.strip().splitlines()
    text = '\n'.join([lines[0] + ',offset'] +
                     [line + ',10' for line in lines[1:]]) + '\n'
    panel = load_panel(_csv(text))
    assert (panel.offsets == 10.0).all()


def test_byte_stream_and_grouping_columns():
    text = 'population,sex,year,age,count\nAT,m,2000,0,1\nAT,f,2000,0,2\n'
    panel = load_panel(io.BytesIO(text.encode('utf-8')))
    assert panel.population_labels == ('AT:m', 'AT:f')
    assert panel.counts[:, 0, 0].tolist() == [1, 2]


@pytest.mark.parametrize('bad, match', [
    (FULL + 'AT,2000,0,1\n', 'Duplicate cell'),
    (FULL.replace('AT,2000,1,4', 'AT,2000,1,4.5'), 'Non-integer count'),
    (FULL.replace('AT,2000,1,4', 'AT,2000,1,-4'), 'Negative count'),
    (FULL.replace('AT,2000,1,4', 'AT,2000,1,x'), 'Non-integer count'),
])
def test_rejections(bad, match):
    with pytest.raises(ValidationError, match=match):
        load_panel(_csv(bad))


def test_nonpositive_offset_rejected():
    text = 'population,year,age,count,offset\nAT,2000,0,1,0\n'
    with pytest.raises(ValidationError, match='offset'):
        load_panel(_csv(text))


def test_missing_column_rejected():
    with pytest.raises(ValidationError, match='count'):
        load_panel(_csv('population,year,age\nAT,2000,0\n'))


def test_year_gap_rejected():
    text = 'population,year,age,count\nAT,2000,0,1\nAT,2002,0,1\n'
    with pytest.raises(ValidationError, match='gap-free'):
        load_panel(_csv(text))


def test_constructor_invariants():
    counts = np.ones((1, 2, 2), dtype=int)
    with pytest.raises(ValidationError):
        panel_from_arrays(-counts)
    with pytest.raises(ValidationError):
        panel_from_arrays(counts, offsets=0.0)
    with pytest.raises(ValidationError):
        CountPanel(counts=counts, offsets=np.ones(counts.shape),
                   population_labels=['a'], year_labels=[2000, 2002],
                   age_labels=[0, 1], mask=np.ones(counts.shape, bool))
    with pytest.raises(ValidationError):
        CountPanel(counts=counts, offsets=np.ones(counts.shape),
                   population_labels=['a', 'b'], year_labels=[1, 2],
                   age_labels=[0, 1], mask=np.ones(counts.shape, bool))


def test_panel_is_read_only():
    panel = load_panel(_csv(FULL))
    with pytest.raises(ValueError):
        panel.counts[0, 0, 0] = 1


def test_csv_round_trip():
    lines = FULL.strip().splitlines()
    text = '\n'.join([lines[0] + ',offset'] +
                     ['%s,%d' % (line, 5 + k)
                      for k, line in enumerate(lines[1:])
                      if k != 3]) + '\n'
    panel = load_panel(_csv(text))
    buffer = io.StringIO()
    write_panel(panel, buffer)
    buffer.seek(0)
    again = load_panel(buffer)
    np.testing.assert_array_equal(again.counts, panel.counts)
    np.testing.assert_array_equal(again.offsets, panel.offsets)
    np.testing.assert_array_equal(again.mask, panel.mask)
    assert again.population_labels == panel.population_labels
    assert again.year_labels == panel.year_labels
    assert again.age_labels == panel.age_labels
    assert panel_digest(again) == panel_digest(panel)


def test_round_trip_keeps_masked_cells_and_labels():
    counts = np.arange(8).reshape(1, 2, 4)
    mask = np.ones(counts.shape, dtype=bool)
    mask[:, :, 0] = False
    mask[0, 1, 2] = False
    panel = panel_from_arrays(counts, mask=mask, first_year=1990)
    buffer = io.StringIO()
    frame = write_panel(panel, buffer)
    assert len(frame) == 8
    assert frame['observed'].tolist() == [0, 1, 1, 1, 0, 1, 0, 1]
    buffer.seek(0)
    again = load_panel(buffer)
    assert again.dims == (1, 2, 4)
    assert again.age_labels == (0, 1, 2, 3)
    np.testing.assert_array_equal(again.mask, panel.mask)
    np.testing.assert_array_equal(again.counts, panel.counts)
    assert panel_digest(again) == panel_digest(panel)


def test_observed_flag_must_be_binary():
    text = 'population,year,age,count,observed\nAT,2000,0,1,2\n'
    with pytest.raises(ValidationError, match='Observed flag'):
        load_panel(_csv(text))


def test_byte_order_mark_is_skipped(tmp_path):
    path = tmp_path / 'bom.csv'
    path.write_bytes(FULL.encode('utf-8-sig'))
    assert load_panel(path).dims == (2, 2, 2)
    assert load_panel(io.BytesIO(FULL.encode('utf-8-sig'))).dims == (2, 2, 2)
    assert load_panel(_csv('\ufeff' + FULL)).population_labels == \
        ('AT', 'DE')


def test_write_panel_omits_unit_offsets(tmp_path):
    panel = load_panel(_csv(FULL))
    frame = write_panel(panel, tmp_path / 'panel.csv')
    assert list(frame.columns) == ['population', 'year', 'age', 'count']
    assert load_panel(tmp_path / 'panel.csv').counts.sum() == 52


def test_window_and_with_mask():
    panel = load_panel(_csv(FULL))
    later = panel.window(1, 2)
    assert later.year_labels == (2001,)
    assert later.counts[0, 0].tolist() == [5, 6]
    held = panel.with_mask(np.zeros(panel.dims, dtype=bool))
    assert held.n_observed == 0
    assert held.counts.sum() == panel.counts.sum()
    with pytest.raises(ValidationError):
        panel.window(1, 1)


def test_log_transform():
    panel = panel_from_arrays(np.array([[[0, 1], [2, 7]]]))
    log_panel = to_log_panel(panel)
    assert log_panel.values[0, 0, 0] == 0.0
    assert math.isclose(log_panel.values[0, 0, 1], 0.693147, abs_tol=1e-6)
    assert log_panel.transform_tag == 'log1p'
    assert np.all(np.diff(log_panel.values.ravel()[[0, 1, 2, 3]]) > 0)
    zeros = to_log_panel(panel_from_arrays(np.zeros((2, 2, 2), dtype=int)))
    assert not zeros.values.any()
