# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Synthetic panels drawn from the matrix factor model itself, and the
# comparison of a fitted chain against the generating values.

import dataclasses
import logging
import math
import pathlib

import numpy as np
import pandas as pd

from matfac_o_matic.config import as_tuple, check_keys
from matfac_o_matic.errors import ValidationError
from matfac_o_matic.model.hosvd import (center_fitted_array, fitted_array,
                                        hosvd_modes)
from matfac_o_matic.model.panel import panel_from_arrays
from matfac_o_matic.model.state import ModelState

logger = logging.getLogger(__name__)

# Zero variances are stored at this floor in the ground-truth state.
VARIANCE_FLOOR = 1e-10


@dataclasses.dataclass
class SimConfig:
    N: int = 50
    T: int = 30
    A: int = 40
    Q: int = 3
    R: int = 3
    tau_T: tuple = (0.01, 0.02, 0.03)
    tau_A: tuple = (0.01, 0.02, 0.03)
    kappa: tuple = (-0.05, 0.05, 0.0)
    sigma2_prior: tuple = (10.0, 1.0)
    offset: float = 10.0
    loading_sd: float = 1.0
    noiseless: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        for name in ('tau_T', 'tau_A', 'kappa', 'sigma2_prior'):
            setattr(self, name, as_tuple(getattr(self, name)))
        for name in ('N', 'T', 'A', 'Q', 'R'):
            if int(getattr(self, name)) < 1:
                raise ValidationError('%s must be >= 1' % name)
            setattr(self, name, int(getattr(self, name)))
        if len(self.tau_T) != self.Q or len(self.kappa) != self.Q:
            raise ValidationError('tau_T and kappa need Q=%d entries'
                                  % self.Q)
        if len(self.tau_A) != self.R:
            raise ValidationError('tau_A needs R=%d entries' % self.R)
        if min(self.tau_T + self.tau_A) < 0:
            raise ValidationError('smoothing variances must be >= 0')
        if len(self.sigma2_prior) != 2 or self.sigma2_prior[0] <= 1 or \
                self.sigma2_prior[1] <= 0:
            raise ValidationError('sigma2_prior must be (shape > 1, '
                                  'scale > 0)')
        if not self.offset > 0 or self.loading_sd < 0:
            raise ValidationError('offset must be positive and loading_sd '
                                  'nonnegative')

    @classmethod
    def reduced(cls, **overrides):
        '''
        Small preset for quick recovery checks.
        '''
        return cls(**dict(dict(N=10, T=15, A=20), **overrides))

    @classmethod
    def from_config(cls, config, **overrides):
        config = dict(config, **overrides)
        check_keys(config, [f.name for f in dataclasses.fields(cls)],
                   'simulation')
        return cls(**config)

    def to_config(self):
        config = dataclasses.asdict(self)
        for name in ('tau_T', 'tau_A', 'kappa', 'sigma2_prior'):
            config[name] = list(config[name])
        return config


def _random_walk(rng, length, variances, drift):
    '''
    length x K paths; the N(0, tau) start is the first grid point.
    '''
    sd = np.sqrt(np.asarray(variances, dtype=float))
    steps = rng.standard_normal((length, len(sd))) * sd
    steps[1:] += np.asarray(drift, dtype=float)
    return np.cumsum(steps, axis=0)


def simulate_panel(cfg):
    '''
    Draw (CountPanel, ground-truth ModelState). The truth's Z includes the
    idiosyncratic noise; Z* is truth.fitted_means().
    '''
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    F_T = _random_walk(rng, cfg.T, cfg.tau_T, cfg.kappa)
    F_A = _random_walk(rng, cfg.A, cfg.tau_A, np.zeros(cfg.R))
    Lambda = cfg.loading_sd * rng.standard_normal((cfg.N, cfg.Q, cfg.R))
    shape, scale = cfg.sigma2_prior
    sigma2 = scale / rng.standard_gamma(shape, size=cfg.N)
    Z_star = (F_T @ Lambda) @ F_A.T
    if cfg.noiseless:
        Z = Z_star.copy()
        sigma2 = np.full(cfg.N, VARIANCE_FLOOR)
    else:
        Z = Z_star + np.sqrt(sigma2)[:, None, None] * \
            rng.standard_normal(Z_star.shape)
    offsets = np.full(Z.shape, float(cfg.offset))
    counts = rng.poisson(offsets * np.exp(Z))

    truth = ModelState(
        Z=Z, F_T=F_T, F_A=F_A, Lambda=Lambda,
        kappa=np.asarray(cfg.kappa, dtype=float),
        tau_T=np.maximum(cfg.tau_T, VARIANCE_FLOOR),
        tau_A=np.maximum(cfg.tau_A, VARIANCE_FLOOR), sigma2=sigma2)
    panel = panel_from_arrays(counts, offsets,
                              population_labels=['sim%02d' % (i + 1)
                                                 for i in range(cfg.N)],
                              first_year=1)
    logger.info('Simulated N=%d T=%d A=%d Q=%d R=%d, mean count %.2f',
                cfg.N, cfg.T, cfg.A, cfg.Q, cfg.R, counts.mean())
    return panel, truth


@dataclasses.dataclass
class RecoveryReport:
    summary: pd.DataFrame
    sigma2: pd.DataFrame

    def value(self, metric):
        hit = self.summary[self.summary['metric'] == metric]
        if hit.empty:
            raise KeyError(metric)
        return float(hit['value'].iloc[0])

    def save(self, directory):
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.summary.to_csv(directory / 'recovery.csv', index=False)
        self.sigma2.to_csv(directory / 'sigma2_recovery.csv', index=False)
        return directory


def _abs_corr(a, b):
    a, b = np.ravel(a), np.ravel(b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    return abs(float(np.corrcoef(a, b)[0, 1]))


def recovery_report(truth, draws, panel=None):
    '''
    Compare a chain with the generating values: sigma^2 interval coverage,
    fitted-mean correlation with Z*, predictive-vs-observed agreement on the
    log(1 + y) scale, and absolute correlations between the leading HOSVD
    components of the true and fitted surfaces.
    '''
    n, t, a, q, r = draws.dims
    if truth.dims != (n, t, a, q, r):
        raise ValidationError('truth dims %s do not match draws %s'
                              % (truth.dims, draws.dims))
    if draws.n_draws == 0:
        raise ValidationError('draw store is empty')

    trace = draws.trace('sigma2')
    lo, hi = np.quantile(trace, [0.025, 0.975], axis=0)
    covered = (lo <= truth.sigma2) & (truth.sigma2 <= hi)
    sigma2 = pd.DataFrame({'population': np.arange(n), 'truth': truth.sigma2,
                           'mean': trace.mean(axis=0), 'q025': lo,
                           'q975': hi, 'covered': covered})

    z_star = truth.fitted_means()
    rows = [('sigma2_coverage', int(covered.sum()) / n),
            ('sigma2_covered', int(covered.sum())),
            ('fitted_corr', _abs_corr(draws.fitted_mean, z_star))]
    if panel is not None and draws.predictive_mean is not None:
        mask = panel.mask
        rows.append(('predictive_corr', _abs_corr(
            np.log1p(draws.predictive_mean[mask]),
            np.log1p(panel.counts[mask].astype(float)))))

    true_modes = hosvd_modes(center_fitted_array(fitted_array(z_star))[0],
                             q, r)
    fit_modes = hosvd_modes(
        center_fitted_array(fitted_array(draws.fitted_mean))[0], q, r)
    for name, left, right in (
            ('time', true_modes.time_components, fit_modes.time_components),
            ('age', true_modes.age_components, fit_modes.age_components)):
        for k in range(min(left.shape[1], right.shape[1])):
            rows.append(('%s_factor_%d_corr' % (name, k + 1),
                         _abs_corr(left[:, k], right[:, k])))
    summary = pd.DataFrame(rows, columns=['metric', 'value'])
    return RecoveryReport(summary=summary, sigma2=sigma2)
