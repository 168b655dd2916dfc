# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Containers the sampler mutates and fills: the parameter state, the
# Metropolis adaptation state, the sampler settings and the draw store.

import dataclasses
import hashlib
import logging
import math
import pathlib
from typing import Optional

import numpy as np
import pandas as pd

from matfac_o_matic.config import (check_keys, load_config, parse_config,
                                   save_config)
from matfac_o_matic.errors import ValidationError

logger = logging.getLogger(__name__)

# Sweep order; every name is a method of model.sampler.GibbsSweep.
DEFAULT_UPDATE_ORDER = ('latent', 'loadings', 'age_factors', 'time_factors',
                        'drifts', 'smoothing_variances', 'noise_variances')

# Largest log-intensity turned into a Poisson mean.
Z_CAP = 30.0

_STATE_BLOCKS = ('Z', 'F_T', 'F_A', 'Lambda', 'kappa', 'tau_T', 'tau_A',
                 'sigma2')


@dataclasses.dataclass
class ModelState:
    '''
    One full parameter configuration of the matrix factor model:
    Z_i = F_T Lambda_i F_A' + E_i, with Z of shape (N, T, A).
    '''
    Z: np.ndarray
    F_T: np.ndarray
    F_A: np.ndarray
    Lambda: np.ndarray
    kappa: np.ndarray
    tau_T: np.ndarray
    tau_A: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        for name in _STATE_BLOCKS:
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.array(value, dtype=float))
        self.validate()

    @property
    def dims(self):
        n, q, r = self.Lambda.shape
        return n, self.F_T.shape[0], self.F_A.shape[0], q, r

    def validate(self):
        n, t, a, q, r = self.dims
        expected = {
            'F_T': (t, q), 'F_A': (a, r), 'kappa': (q,), 'tau_T': (q,),
            'tau_A': (r,), 'sigma2': (n,)}
        if self.Z is not None:
            expected['Z'] = (n, t, a)
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError('%s has shape %s, expected %s'
                                      % (name, getattr(self, name).shape,
                                         shape))
        for name in ('tau_T', 'tau_A', 'sigma2'):
            if not (getattr(self, name) > 0).all():
                raise ValidationError('%s must be strictly positive' % name)

    def fitted_means(self):
        return (self.F_T @ self.Lambda) @ self.F_A.T

    def copy(self):
        return ModelState(**{name: None if getattr(self, name) is None
                             else getattr(self, name).copy()
                             for name in _STATE_BLOCKS})

    def save(self, directory):
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n, t, a, q, r = self.dims
        save_config({'kind': 'state', 'N': n, 'T': t, 'A': a, 'Q': q, 'R': r},
                    directory / 'manifest.txt')
        for name in _STATE_BLOCKS:
            if getattr(self, name) is not None:
                np.save(directory / ('%s.npy' % name), getattr(self, name))

    @classmethod
    def load(cls, directory):
        directory = pathlib.Path(directory)
        blocks = {}
        for name in _STATE_BLOCKS:
            path = directory / ('%s.npy' % name)
            blocks[name] = np.load(path) if path.exists() else None
        return cls(**blocks)


@dataclasses.dataclass
class AdaptState:
    '''
    Per-cell random-walk Metropolis scales for the latent z, adapted in
    batches during burn-in only.
    '''
    log_step: np.ndarray
    accept_counts: np.ndarray
    proposal_counts: np.ndarray
    target_accept: float = 0.44
    adaptation_horizon: int = 0
    batch_size: int = 50
    batch_accepts: Optional[np.ndarray] = None
    n_batches: int = 0
    iterations: int = 0

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise ValidationError('target_accept must lie in (0, 1)')
        if self.batch_accepts is None:
            self.batch_accepts = np.zeros(self.log_step.shape, dtype=np.int64)

    @classmethod
    def start(cls, shape, initial_step=1.0, **kwargs):
        return cls(log_step=np.full(shape, math.log(initial_step)),
                   accept_counts=np.zeros(shape, dtype=np.int64),
                   proposal_counts=np.zeros(shape, dtype=np.int64), **kwargs)

    def acceptance_rates(self):
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(self.proposal_counts > 0,
                            self.accept_counts / self.proposal_counts, np.nan)


@dataclasses.dataclass
class SamplerConfig:
    '''
    n_iterations counts every sweep including the n_burnin discarded ones.
    '''
    n_iterations: int = 25000
    n_burnin: int = 7500
    thin: int = 1
    rng_seed: int = 0
    update_order: tuple = DEFAULT_UPDATE_ORDER
    ridge: float = 1e-8
    tau_floor: float = 1e-10
    target_accept: float = 0.44
    batch_size: int = 50
    initial_step: float = 0.5
    keep_factors: bool = False
    keep_latent: bool = False
    log_every: int = 1000

    def __post_init__(self):
        if isinstance(self.update_order, str):
            self.update_order = (self.update_order,)
        self.update_order = tuple(self.update_order)
        if self.thin < 1:
            raise ValidationError('thin must be >= 1')
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValidationError('need 0 <= n_burnin < n_iterations, got '
                                  '%d / %d' % (self.n_burnin,
                                               self.n_iterations))
        unknown = set(self.update_order) - set(DEFAULT_UPDATE_ORDER)
        if unknown:
            raise ValidationError('Unknown update step(s): %s'
                                  % ', '.join(sorted(unknown)))
        if self.ridge <= 0 or self.tau_floor <= 0:
            raise ValidationError('ridge and tau_floor must be positive')

    @property
    def n_draws(self):
        return (self.n_iterations - self.n_burnin) // self.thin

    def is_retained(self, iteration):
        kept = iteration - self.n_burnin + 1
        return kept > 0 and kept % self.thin == 0

    @classmethod
    def from_config(cls, config, **overrides):
        config = dict(config, **overrides)
        check_keys(config, [f.name for f in dataclasses.fields(cls)],
                   'sampler')
        return cls(**config)

    def to_config(self):
        config = dataclasses.asdict(self)
        config['update_order'] = list(self.update_order)
        return config


class _Running(object):
    '''
    Welford running mean / variance of an array-valued quantity.
    '''

    def __init__(self):
        self.count = 0
        self.mean = None
        self.m2 = None

    def push(self, value):
        value = np.asarray(value, dtype=float)
        self.count += 1
        if self.mean is None:
            self.mean = value.copy()
            self.m2 = np.zeros_like(value)
            return
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def variance(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)


class DrawStore(object):
    '''
    Thinned posterior draws of a chain. sigma2, tau_T, tau_A, kappa and the
    log-likelihood are always kept; factor and loading draws only when the
    sampler config asks for them. Fitted means and predictive mean counts
    are summarized as running moments.
    '''

    _TRACES = ('sigma2', 'tau_T', 'tau_A', 'kappa', 'loglik')
    _FACTORS = ('F_T', 'F_A', 'Lambda')

    def __init__(self, dims, config=None, input_digest='', watch_mask=None):
        self.dims = tuple(int(d) for d in dims)
        self.config = config or SamplerConfig()
        self.input_digest = input_digest
        self.traces = {name: [] for name in self._TRACES}
        self.factors = {name: [] for name in self._FACTORS}
        self.latent = []
        # Z at the watched cells (e.g. a CV fold), one row per draw.
        self.watch_mask = None if watch_mask is None else \
            np.asarray(watch_mask, dtype=bool)
        self.watched = []
        self._fitted = _Running()
        self._predictive = _Running()
        self.accept_rate = None
        self.completed_iterations = 0
        self.error = None

    @property
    def run_id(self):
        text = '%s|%s|%s' % (self.config.rng_seed, self.dims,
                             self.input_digest)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]

    @property
    def n_draws(self):
        return len(self.traces['sigma2'])

    @property
    def has_factors(self):
        return len(self.factors['F_T']) == self.n_draws > 0

    def record(self, state, loglik=np.nan, offsets=None, keep_factors=None,
               keep_latent=None):
        keep_factors = self.config.keep_factors if keep_factors is None \
            else keep_factors
        keep_latent = self.config.keep_latent if keep_latent is None \
            else keep_latent
        for name in ('sigma2', 'tau_T', 'tau_A', 'kappa'):
            self.traces[name].append(getattr(state, name).copy())
        self.traces['loglik'].append(float(loglik))
        if keep_factors:
            for name in self._FACTORS:
                self.factors[name].append(getattr(state, name).copy())
        if keep_latent and state.Z is not None:
            self.latent.append(state.Z.copy())
        if self.watch_mask is not None and state.Z is not None:
            self.watched.append(state.Z[self.watch_mask].copy())
        self._fitted.push(state.fitted_means())
        if state.Z is not None:
            offsets = 1.0 if offsets is None else offsets
            self._predictive.push(offsets * np.exp(np.minimum(state.Z,
                                                              Z_CAP)))

    def trace(self, name):
        values = self.traces[name]
        if not values:
            return np.zeros((0,))
        return np.asarray(values)

    def factor_draws(self, name):
        return np.asarray(self.factors[name])

    def watched_draws(self):
        n_watch = 0 if self.watch_mask is None else int(self.watch_mask.sum())
        if not self.watched:
            return np.zeros((0, n_watch))
        return np.asarray(self.watched)

    @property
    def fitted_mean(self):
        return self._fitted.mean

    @property
    def fitted_sd(self):
        return np.sqrt(self._fitted.variance)

    @property
    def predictive_mean(self):
        return self._predictive.mean

    def states(self):
        '''
        Yield a ModelState per retained draw (Z is None unless latent draws
        were kept). Requires factor draws.
        '''
        if not self.has_factors:
            raise ValidationError('DrawStore holds no factor draws; rerun '
                                  'with keep_factors=true')
        for s in range(self.n_draws):
            yield ModelState(
                Z=self.latent[s] if len(self.latent) == self.n_draws
                else None,
                F_T=self.factors['F_T'][s], F_A=self.factors['F_A'][s],
                Lambda=self.factors['Lambda'][s],
                kappa=self.traces['kappa'][s], tau_T=self.traces['tau_T'][s],
                tau_A=self.traces['tau_A'][s],
                sigma2=self.traces['sigma2'][s])

    def summary_frame(self):
        '''
        Posterior means/SDs of identified functionals.
        '''
        rows = []
        sigma2 = self.trace('sigma2')
        for i in range(self.dims[0]):
            column = sigma2[:, i] if sigma2.size else np.array([np.nan])
            rows.append(('sigma2[%d]' % i,) + _summarize(column))
        rows.append(('loglik',) + _summarize(self.trace('loglik')))
        if self.fitted_mean is not None:
            rows.append(('fitted_mean_avg',
                         float(self.fitted_mean.mean()),
                         float(self.fitted_sd.mean()), np.nan, np.nan))
        return pd.DataFrame(rows, columns=['parameter', 'mean', 'sd',
                                           'q025', 'q975'])

    def manifest(self):
        n, t, a, q, r = self.dims
        manifest = {'kind': 'draws', 'N': n, 'T': t, 'A': a, 'Q': q, 'R': r,
                    'n_draws': self.n_draws, 'run_id': self.run_id,
                    'input_digest': self.input_digest,
                    'completed_iterations': self.completed_iterations,
                    'error': _flat(self.error) if self.error else 'none'}
        manifest.update(('sampler.%s' % k, v)
                        for k, v in self.config.to_config().items())
        return manifest

    def save(self, directory):
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_config(self.manifest(), directory / 'manifest.txt')
        for name in self._TRACES:
            np.save(directory / ('%s.npy' % name), self.trace(name))
        if self.has_factors:
            for name in self._FACTORS:
                np.save(directory / ('%s.npy' % name), self.factor_draws(name))
        if self.latent:
            np.save(directory / 'Z.npy', np.asarray(self.latent))
        if self.watch_mask is not None:
            np.save(directory / 'watch_mask.npy', self.watch_mask)
            np.save(directory / 'watched.npy', self.watched_draws())
        running = {'fitted_mean': self._fitted, 'predictive_mean':
                   self._predictive}
        for name, acc in running.items():
            if acc.mean is not None:
                np.save(directory / ('%s.npy' % name), acc.mean)
                np.save(directory / ('%s_m2.npy' % name), acc.m2)
                save_config({'count': acc.count},
                            directory / ('%s.count' % name))
        if self.accept_rate is not None:
            np.save(directory / 'accept_rate.npy', self.accept_rate)
        self.summary_frame().to_csv(directory / 'summary.csv', index=False)
        sigma2 = self.trace('sigma2')
        if sigma2.size:
            pd.DataFrame(sigma2, columns=['sigma2[%d]' % i for i in
                                          range(sigma2.shape[1])]) \
                .to_csv(directory / 'sigma2_trace.csv', index_label='draw')
        return directory

    @classmethod
    def load(cls, directory):
        directory = pathlib.Path(directory)
        manifest = load_config(directory / 'manifest.txt')
        sampler = {k.split('.', 1)[1]: v for k, v in manifest.items()
                   if k.startswith('sampler.')}
        store = cls((manifest['N'], manifest['T'], manifest['A'],
                     manifest['Q'], manifest['R']),
                    config=SamplerConfig.from_config(sampler),
                    input_digest=str(manifest.get('input_digest') or ''))
        store.completed_iterations = manifest.get('completed_iterations', 0)
        error = manifest.get('error')
        store.error = None if error in (None, 'none') else str(error)
        for name in cls._TRACES:
            path = directory / ('%s.npy' % name)
            if path.exists():
                store.traces[name] = list(np.load(path))
        for name in cls._FACTORS:
            path = directory / ('%s.npy' % name)
            if path.exists():
                store.factors[name] = list(np.load(path))
        if (directory / 'Z.npy').exists():
            store.latent = list(np.load(directory / 'Z.npy'))
        if (directory / 'watch_mask.npy').exists():
            store.watch_mask = np.load(directory / 'watch_mask.npy')
            store.watched = list(np.load(directory / 'watched.npy'))
        for name, acc in (('fitted_mean', store._fitted),
                          ('predictive_mean', store._predictive)):
            path = directory / ('%s.npy' % name)
            if path.exists():
                acc.mean = np.load(path)
                acc.m2 = np.load(directory / ('%s_m2.npy' % name))
                acc.count = parse_config(
                    (directory / ('%s.count' % name)).read_text())['count']
        if (directory / 'accept_rate.npy').exists():
            store.accept_rate = np.load(directory / 'accept_rate.npy')
        return store


def _summarize(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.all(np.isnan(values)):
        return (np.nan,) * 4
    return (float(np.nanmean(values)), float(np.nanstd(values)),
            float(np.nanquantile(values, 0.025)),
            float(np.nanquantile(values, 0.975)))


def _flat(text):
    # Manifest values are single-line and comma-free.
    return ' '.join(str(text).replace(',', ';').replace('#', '').split())
