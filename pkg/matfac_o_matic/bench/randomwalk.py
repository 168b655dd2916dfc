# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Univariate random walks on every (population, age) log series.

import numpy as np

from matfac_o_matic.bench.base import BaseForecaster, drift_forecast
from matfac_o_matic.errors import ValidationError


def rw_forecast(series, h, drift):
    '''
    Last value, plus h times the mean first difference when drift is set.
    '''
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or len(series) < (2 if drift else 1):
        raise ValidationError('random walk%s needs a series of length >= %d'
                              % (' with drift' if drift else '',
                                 2 if drift else 1))
    if drift:
        return float(drift_forecast(series, h))
    return float(series[-1])


class Forecaster(BaseForecaster):

    @property
    def drift(self):
        return self.spec.kind == 'rw_drift'

    def _check(self, values):
        if values.shape[1] < (2 if self.drift else 1):
            raise ValidationError('%s needs more training years than %d'
                                  % (self.spec.kind, values.shape[1]))

    def _forecast(self, values, h):
        if not self.drift:
            return values[:, -1, :].copy()
        # Time on axis 0 for drift_forecast.
        series = np.moveaxis(values, 1, 0)
        return drift_forecast(series, h)
