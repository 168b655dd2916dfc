# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Age factorizations: each year's age profile is a population intercept plus
# a few SVD age factors with time-varying loadings; the loadings move
# forward as random walks with drift.

import numpy as np

from matfac_o_matic.bench.base import (BaseForecaster, BenchmarkSpec,
                                       drift_forecast, leading_right_vectors,
                                       least_squares)
from matfac_o_matic.errors import ValidationError


def _profile_loadings(profiles, factors):
    '''
    Intercept (mean of the whole slice) and least-squares loadings
    (T x R) of a population's T x A profiles.
    '''
    alpha = profiles.mean()
    beta = least_squares(factors, (profiles - alpha).T).T
    return alpha, beta


def in_sample_fit(profiles, factors):
    alpha, beta = _profile_loadings(profiles, factors)
    return alpha + beta @ factors.T


def _forecast_profiles(profiles, factors, h):
    alpha, beta = _profile_loadings(profiles, factors)
    return alpha + drift_forecast(beta, h) @ factors.T


def age_factorization_forecast(panel, R, joint, h):
    '''
    h-step log(1 + y) forecast, N x A, from a LogPanel.
    '''
    kind = 'age_fact_joint' if joint else 'age_fact_sep'
    return Forecaster(BenchmarkSpec(kind, R)).forecast(panel, h)


class Forecaster(BaseForecaster):

    @property
    def joint(self):
        return self.spec.kind == 'age_fact_joint'

    def _check(self, values):
        _, t, a = values.shape
        if t < 2:
            raise ValidationError('age factorization needs T >= 2')
        if self.spec.n_factors > a:
            raise ValidationError('R=%d exceeds A=%d'
                                  % (self.spec.n_factors, a))

    def _forecast(self, values, h):
        n, t, a = values.shape
        R = self.spec.n_factors
        if self.joint:
            factors = leading_right_vectors(values.reshape(n * t, a), R)
            return np.stack([_forecast_profiles(values[i], factors, h)
                             for i in range(n)])
        return np.stack([
            _forecast_profiles(values[i],
                               leading_right_vectors(values[i], R), h)
            for i in range(n)])
