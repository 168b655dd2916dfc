# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# The observed N x T x A count tensor, its CSV ingestion/emission, and the
# log(1+y) transform shared by the Bayesian model and the benchmarks.

import dataclasses
import hashlib
import io
import logging
import pathlib
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from matfac_o_matic.errors import ValidationError

logger = logging.getLogger(__name__)

LOG1P = 'log1p'

DEFAULT_SCHEMA = {
    'population': ('population', 'sex'),
    'year': 'year',
    'age': 'age',
    'count': 'count',
    'offset': 'offset',
    'observed': 'observed',
}

# Joins the grouping columns into a single population key.
KEY_SEPARATOR = ':'


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclasses.dataclass(frozen=True)
class CountPanel:
    '''
    Counts y[i, t, x] and exposures O[i, t, x] for N populations, T annual
    time points and A ages. mask[i, t, x] is False for cells that are
    missing or held out; the likelihood skips them.
    '''
    counts: np.ndarray
    offsets: np.ndarray
    population_labels: tuple
    year_labels: tuple
    age_labels: tuple
    mask: np.ndarray

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        offsets = _frozen(self.offsets, float)
        mask = _frozen(self.mask, bool)
        object.__setattr__(self, 'counts', counts)
        object.__setattr__(self, 'offsets', offsets)
        object.__setattr__(self, 'mask', mask)
        for name in ('population_labels', 'year_labels', 'age_labels'):
            object.__setattr__(self, name, tuple(getattr(self, name)))

        if counts.ndim != 3:
            raise ValidationError('counts must be a 3-d tensor, got shape %s'
                                  % (counts.shape,))
        if offsets.shape != counts.shape or mask.shape != counts.shape:
            raise ValidationError('counts, offsets and mask shapes differ: '
                                  '%s, %s, %s' % (counts.shape, offsets.shape,
                                                  mask.shape))
        if (counts < 0).any():
            raise ValidationError('counts must be nonnegative')
        if not (np.isfinite(offsets).all() and (offsets > 0).all()):
            raise ValidationError('offsets must be finite and positive')
        n, t, a = counts.shape
        if (len(self.population_labels), len(self.year_labels),
                len(self.age_labels)) != (n, t, a):
            raise ValidationError('label lengths do not match dims %s'
                                  % (counts.shape,))
        years = np.asarray(self.year_labels)
        if t > 1 and not np.array_equal(np.diff(years), np.ones(t - 1)):
            raise ValidationError('year labels must increase by exactly 1: %s'
                                  % (self.year_labels,))

    @property
    def dims(self):
        return self.counts.shape

    @property
    def n_observed(self):
        return int(self.mask.sum())

    def with_mask(self, mask):
        '''
        Copy of this panel with a different mask. Newly masked cells keep
        their counts so held-out truth stays available for evaluation.
        '''
        return dataclasses.replace(self, mask=np.asarray(mask, dtype=bool))

    def window(self, start, stop):
        '''
        Time slice [start, stop) by position.
        '''
        if not 0 <= start < stop <= self.dims[1]:
            raise ValidationError('window [%d, %d) outside 0..%d'
                                  % (start, stop, self.dims[1]))
        return CountPanel(
            counts=self.counts[:, start:stop],
            offsets=self.offsets[:, start:stop],
            population_labels=self.population_labels,
            year_labels=self.year_labels[start:stop],
            age_labels=self.age_labels,
            mask=self.mask[:, start:stop])


@dataclasses.dataclass(frozen=True)
class LogPanel:
    values: np.ndarray
    mask: np.ndarray
    transform_tag: str = LOG1P

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen(self.values, float))
        object.__setattr__(self, 'mask', _frozen(self.mask, bool))

    @property
    def dims(self):
        return self.values.shape


def to_log_panel(panel):
    return LogPanel(values=np.log1p(panel.counts.astype(float)),
                    mask=panel.mask, transform_tag=LOG1P)


def _schema_columns(schema, frame):
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    group = schema['population']
    if isinstance(group, str):
        group = (group,)
    # Grouping columns other than the first are optional, e.g. 'sex'.
    group = tuple(c for k, c in enumerate(group)
                  if k == 0 or c in frame.columns)
    required = group + (schema['year'], schema['age'], schema['count'])
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValidationError('CSV is missing column(s): %s'
                              % ', '.join(missing))
    optional = [schema.get(name) for name in ('offset', 'observed')]
    optional = [c if c is not None and c in frame.columns else None
                for c in optional]
    return (group, schema['year'], schema['age'], schema['count'],
            *optional)


def _integer_column(values, name):
    numeric = pd.to_numeric(values, errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(numeric) | (numeric != np.round(numeric))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValidationError('Non-integer %s in data row %d: %r'
                              % (name, row + 1, values.iloc[row]))
    return numeric.astype(np.int64)


def _ordered_labels(values):
    labels = pd.unique(values)
    if np.issubdtype(np.asarray(labels).dtype, np.number):
        labels = np.sort(labels)
    return [label.item() if hasattr(label, 'item') else label
            for label in labels]


def load_panel(csv_source, schema=None):
    '''
    Read a long-format CSV (population[,sex],year,age,count[,offset]
    [,observed]) into a dense CountPanel. csv_source may be a path, a text
    stream or a byte stream. Cells absent from the file are masked with
    count 0 and offset 1; rows with observed=0 keep their count but are
    masked too.
    '''
    if isinstance(csv_source, (str, pathlib.Path)):
        frame = pd.read_csv(csv_source, dtype=str, encoding='utf-8-sig')
    else:
        data = csv_source.read()
        if isinstance(data, bytes):
            data = data.decode('utf-8-sig')
        data = data.removeprefix('\ufeff')
        frame = pd.read_csv(io.StringIO(data), dtype=str)

    group, year_col, age_col, count_col, offset_col, observed_col = \
        _schema_columns(schema, frame)

    population = frame[group[0]].astype(str)
    for column in group[1:]:
        population = population + KEY_SEPARATOR + frame[column].astype(str)
    years = _integer_column(frame[year_col], 'year')
    ages = pd.to_numeric(frame[age_col], errors='coerce')
    if ages.isna().any():
        ages = frame[age_col]
    else:
        ages = _integer_column(frame[age_col], 'age')
    counts = _integer_column(frame[count_col], 'count')
    if (counts < 0).any():
        row = int(np.flatnonzero(counts < 0)[0])
        raise ValidationError('Negative count in data row %d: %d'
                              % (row + 1, counts[row]))
    if offset_col is not None:
        offsets = pd.to_numeric(frame[offset_col], errors='coerce') \
            .to_numpy(dtype=float)
        bad = ~np.isfinite(offsets) | (offsets <= 0)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValidationError('Nonpositive offset in data row %d: %r'
                                  % (row + 1, frame[offset_col].iloc[row]))
    else:
        offsets = np.ones(len(frame))
    if observed_col is not None:
        observed = _integer_column(frame[observed_col], 'observed flag')
        if not np.isin(observed, (0, 1)).all():
            row = int(np.flatnonzero(~np.isin(observed, (0, 1)))[0])
            raise ValidationError('Observed flag must be 0 or 1 in data row '
                                  '%d: %r' % (row + 1,
                                              frame[observed_col].iloc[row]))
        observed = observed.astype(bool)
    else:
        observed = np.ones(len(frame), dtype=bool)

    pop_labels = list(pd.unique(population))
    year_labels = list(range(int(years.min()), int(years.max()) + 1)) \
        if len(years) else []
    if len(years) and len(np.unique(years)) != len(year_labels):
        raise ValidationError('Years must form a gap-free annual grid, got %s'
                              % sorted(set(years.tolist())))
    age_labels = _ordered_labels(np.asarray(ages))

    pi = pd.Index(pop_labels).get_indexer(population)
    ti = years - (year_labels[0] if year_labels else 0)
    xi = pd.Index(age_labels).get_indexer(np.asarray(ages))

    shape = (len(pop_labels), len(year_labels), len(age_labels))
    flat = np.ravel_multi_index((pi, ti, xi), shape) if len(frame) else \
        np.zeros(0, dtype=int)
    seen, first, n_seen = np.unique(flat, return_index=True,
                                    return_counts=True)
    if (n_seen > 1).any():
        cell = seen[np.flatnonzero(n_seen > 1)[0]]
        i, t, x = np.unravel_index(cell, shape)
        raise ValidationError(
            'Duplicate cell (population=%s, year=%s, age=%s)'
            % (pop_labels[i], year_labels[t], age_labels[x]))

    count_tensor = np.zeros(shape, dtype=np.int64)
    offset_tensor = np.ones(shape)
    mask = np.zeros(shape, dtype=bool)
    count_tensor.flat[flat] = counts
    offset_tensor.flat[flat] = offsets
    mask.flat[flat] = observed

    n_missing = mask.size - mask.sum()
    if n_missing:
        logger.info('Panel has %d missing or unobserved cell(s); they are '
                    'masked', n_missing)
    return CountPanel(counts=count_tensor, offsets=offset_tensor,
                      population_labels=pop_labels, year_labels=year_labels,
                      age_labels=age_labels, mask=mask)


def panel_frame(panel, include_offsets=None):
    '''
    Long-format DataFrame of every cell, in (i, t, x) order. An 'observed'
    column is added when some cells are masked, so masked cells and labels
    without any observation survive a round trip.
    '''
    i, t, x = np.indices(panel.dims).reshape(3, -1)
    frame = pd.DataFrame({
        'population': np.asarray(panel.population_labels, dtype=object)[i],
        'year': np.asarray(panel.year_labels)[t],
        'age': np.asarray(panel.age_labels, dtype=object)[x],
        'count': panel.counts[i, t, x],
    })
    if include_offsets is None:
        include_offsets = not np.all(panel.offsets == 1.0)
    if include_offsets:
        frame['offset'] = panel.offsets[i, t, x]
    if not panel.mask.all():
        frame['observed'] = panel.mask[i, t, x].astype(int)
    return frame


def write_panel(panel, dest, include_offsets=None):
    '''
    Emit the panel as CSV in the format load_panel reads.
    '''
    frame = panel_frame(panel, include_offsets)
    if isinstance(dest, (str, pathlib.Path)):
        frame.to_csv(dest, index=False, encoding='utf-8')
    else:
        frame.to_csv(dest, index=False)
    return frame


def panel_from_arrays(counts, offsets=None, mask=None,
                      population_labels: Optional[Sequence] = None,
                      year_labels: Optional[Sequence] = None,
                      age_labels: Optional[Sequence] = None, first_year=1):
    '''
    Convenience constructor with default labels.
    '''
    counts = np.asarray(counts)
    n, t, a = counts.shape
    return CountPanel(
        counts=counts,
        offsets=np.ones(counts.shape) if offsets is None
        else np.broadcast_to(offsets, counts.shape),
        population_labels=population_labels or
        ['p%d' % i for i in range(n)],
        year_labels=year_labels or list(range(first_year, first_year + t)),
        age_labels=age_labels or list(range(a)),
        mask=np.ones(counts.shape, dtype=bool) if mask is None else mask)


def panel_digest(panel):
    '''
    sha256 over the tensors and labels, recorded in run manifests.
    '''
    digest = hashlib.sha256()
    for array in (panel.counts, panel.offsets, panel.mask):
        digest.update(np.ascontiguousarray(array).tobytes())
    for labels in (panel.population_labels, panel.year_labels,
                   panel.age_labels):
        digest.update(repr(labels).encode('utf-8'))
    return digest.hexdigest()
