# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import dataclasses
import logging

import numpy as np
from scipy import linalg

from matfac_o_matic.errors import ValidationError

logger = logging.getLogger(__name__)

# Row standard deviations below this are treated as zero when scaling.
SD_GUARD = 1e-12

KINDS = ('rw', 'rw_drift', 'time_fact_sep', 'time_fact_joint',
         'age_fact_sep', 'age_fact_joint')
FACTOR_KINDS = KINDS[2:]


@dataclasses.dataclass(frozen=True)
class BenchmarkSpec:
    '''
    One competitor forecaster. n_factors is Q for time factorizations and R
    for age factorizations; the random walks ignore it.
    '''
    kind: str
    n_factors: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError('Unknown benchmark kind %r; known: %s'
                                  % (self.kind, ', '.join(KINDS)))
        if self.kind in FACTOR_KINDS and int(self.n_factors) < 1:
            raise ValidationError('%s needs n_factors >= 1' % self.kind)
        object.__setattr__(self, 'n_factors', int(self.n_factors))

    @property
    def label(self):
        if self.kind in FACTOR_KINDS:
            return '%s:%d' % (self.kind, self.n_factors)
        return self.kind

    @classmethod
    def parse(cls, text):
        '''
        'rw', 'rw_drift' or '<kind>:<n_factors>'.
        '''
        kind, _, n = str(text).strip().partition(':')
        try:
            return cls(kind, int(n) if n else 1)
        except ValueError:
            raise ValidationError('Bad benchmark spec %r' % text)


def row_standardize(rows):
    '''
    Center each row and divide by its standard deviation; rows with
    sd < SD_GUARD are only centered.
    '''
    rows = np.asarray(rows, dtype=float)
    mean = rows.mean(axis=1, keepdims=True)
    sd = rows.std(axis=1, keepdims=True)
    flat = sd < SD_GUARD
    if flat.any():
        logger.debug('%d constant row(s) centered but not scaled',
                     int(flat.sum()))
    sd = np.where(flat, 1.0, sd)
    return (rows - mean) / sd, mean, sd


def leading_right_vectors(rows, k):
    '''
    First k right singular vectors (columns of V) of a row-standardized
    matrix, from the full SVD so k may reach the column count.
    '''
    scaled, _, _ = row_standardize(rows)
    _, _, vh = linalg.svd(scaled, full_matrices=True)
    return vh[:k].T


def drift_forecast(series, h):
    '''
    Random walk with drift on the columns of a T x K matrix: last row plus h
    times the mean first difference.
    '''
    series = np.asarray(series, dtype=float)
    if series.shape[0] < 2:
        raise ValidationError('drift needs at least 2 time points')
    drift = (series[-1] - series[0]) / (series.shape[0] - 1)
    return series[-1] + h * drift


def least_squares(design, targets):
    # Minimum-norm solution; collinear factors are allowed.
    coef, _, _, _ = linalg.lstsq(design, targets)
    return coef


def filled_values(panel):
    '''
    Log values with masked cells replaced by the observed mean of their
    (population, age) series over time, then of their population.
    '''
    if panel.mask.all():
        return panel.values
    values = np.where(panel.mask, panel.values, np.nan)
    n_missing = int((~panel.mask).sum())
    logger.warning('benchmark input has %d masked cell(s); filled with '
                   'series means', n_missing)
    counts = panel.mask.sum(axis=1, keepdims=True)
    by_age = np.where(counts > 0, np.nansum(values, axis=1, keepdims=True)
                      / np.maximum(counts, 1), np.nan)
    pop_counts = panel.mask.sum(axis=(1, 2), keepdims=True)
    by_pop = np.nansum(values, axis=(1, 2), keepdims=True) / \
        np.maximum(pop_counts, 1)
    fill = np.where(np.isnan(by_age), by_pop, by_age)
    return np.where(panel.mask, panel.values, np.broadcast_to(fill,
                                                              values.shape))


class BaseForecaster(object):
    """
    Parent class of the benchmark forecasters. Subclasses implement
    _forecast(values, h) on a filled N x T x A array of log(1 + y).
    """

    def __init__(self, spec):
        self.spec = spec

    def _check(self, values):
        pass

    def _forecast(self, values, h):
        raise NotImplementedError()

    def forecast(self, panel, h):
        '''
        h-step-ahead point forecast on the log(1 + y) scale, N x A.
        '''
        if int(h) < 1:
            raise ValidationError('horizon must be >= 1, got %r' % (h,))
        values = filled_values(panel)
        self._check(values)
        return self._forecast(values, int(h))

    def forecast_many(self, panel, horizons):
        return {h: self.forecast(panel, h) for h in horizons}
