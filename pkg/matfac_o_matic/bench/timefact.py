# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Time factorizations: every (population, age) log series is regressed on a
# few SVD time factors, and the factors move forward as random walks with
# drift. The separate variant extracts factors per population from its
# A x T matrix; the joint variant from the AN x T time-mode unfolding.

import numpy as np

from matfac_o_matic.bench.base import (BaseForecaster, BenchmarkSpec,
                                       drift_forecast, leading_right_vectors,
                                       least_squares)
from matfac_o_matic.errors import ValidationError


def _svd_factors(rows, Q):
    '''
    Time factors (T x Q) of a series-by-time matrix.
    '''
    return leading_right_vectors(rows, Q)


def _fit_rows(rows, Q):
    '''
    Intercepts and factor loadings of every row on the first Q time
    factors. Returns (factors T x Q, coef (Q + 1) x rows).
    '''
    factors = _svd_factors(rows, Q)
    design = np.column_stack([np.ones(rows.shape[1]), factors])
    return factors, least_squares(design, rows.T)


def in_sample_fit(rows, Q):
    factors, coef = _fit_rows(rows, Q)
    return (coef[0][:, None] + (factors @ coef[1:]).T)


def _forecast_rows(rows, Q, h):
    factors, coef = _fit_rows(rows, Q)
    future = drift_forecast(factors, h)
    return coef[0] + future @ coef[1:]


def time_factorization_forecast(panel, Q, joint, h):
    '''
    h-step log(1 + y) forecast, N x A, from a LogPanel.
    '''
    kind = 'time_fact_joint' if joint else 'time_fact_sep'
    return Forecaster(BenchmarkSpec(kind, Q)).forecast(panel, h)


class Forecaster(BaseForecaster):

    @property
    def joint(self):
        return self.spec.kind == 'time_fact_joint'

    def _check(self, values):
        t = values.shape[1]
        if t < 2:
            raise ValidationError('time factorization needs T >= 2')
        if self.spec.n_factors > t:
            raise ValidationError('Q=%d exceeds T=%d'
                                  % (self.spec.n_factors, t))

    def _forecast(self, values, h):
        n, t, a = values.shape
        Q = self.spec.n_factors
        if self.joint:
            # Rows are (population, age) pairs, population-major.
            rows = values.transpose(0, 2, 1).reshape(n * a, t)
            return _forecast_rows(rows, Q, h).reshape(n, a)
        return np.stack([_forecast_rows(values[i].T, Q, h)
                         for i in range(n)])
