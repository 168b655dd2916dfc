# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Posterior predictive simulation of future years: time factors move forward
# as random walks with drift, the latent surface follows from the sampled
# loadings and age factors, and counts are Poisson given the surface.

import dataclasses
import logging
import pathlib

import numpy as np
import pandas as pd

from matfac_o_matic.config import save_config
from matfac_o_matic.errors import ValidationError
from matfac_o_matic.model.state import Z_CAP

logger = logging.getLogger(__name__)

_QUANTILES = (0.05, 0.5, 0.95)


@dataclasses.dataclass
class ForecastSet:
    '''
    S predictive draws for horizons 1..H after the last training year.
    A two-step point forecast is a single draw holding expected counts.
    factor_draws is S x H x Q; latent_draws and count_draws are
    S x N x H x A.
    '''
    horizons: tuple
    factor_draws: np.ndarray
    latent_draws: np.ndarray
    count_draws: np.ndarray
    provenance: dict
    population_labels: tuple = ()
    year_labels: tuple = ()
    age_labels: tuple = ()

    def __post_init__(self):
        self.horizons = tuple(int(h) for h in self.horizons)
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValidationError('horizons must be strictly increasing')
        sizes = {len(self.factor_draws), len(self.latent_draws),
                 len(self.count_draws)}
        if len(sizes) != 1:
            raise ValidationError('factor, latent and count draw counts '
                                  'differ: %s' % sorted(sizes))
        n, h, a = self.count_draws.shape[1:]
        if h != len(self.horizons):
            raise ValidationError('draws cover %d horizons, expected %d'
                                  % (h, len(self.horizons)))
        self.population_labels = tuple(self.population_labels) or \
            tuple('p%d' % i for i in range(n))
        self.age_labels = tuple(self.age_labels) or tuple(range(a))
        self.year_labels = tuple(self.year_labels) or self.horizons

    @property
    def n_draws(self):
        return len(self.count_draws)

    def point_forecast(self):
        '''
        Posterior mean of log(1 + y), N x H x A.
        '''
        return np.log1p(self.count_draws).mean(axis=0)

    def summary_frame(self):
        frames = []
        n, h, a = self.count_draws.shape[1:]
        i, k, x = np.meshgrid(np.arange(n), np.arange(h), np.arange(a),
                              indexing='ij')
        i, k, x = i.ravel(), k.ravel(), x.ravel()
        for scale, draws in (('count', self.count_draws.astype(float)),
                             ('log1p', np.log1p(self.count_draws))):
            flat = draws.reshape(len(draws), -1)
            frame = pd.DataFrame({
                'population': np.asarray(self.population_labels,
                                         dtype=object)[i],
                'age': np.asarray(self.age_labels, dtype=object)[x],
                'horizon': np.asarray(self.horizons)[k],
                'year': np.asarray(self.year_labels)[k],
                'scale': scale,
                'mean': flat.mean(axis=0),
                'sd': flat.std(axis=0, ddof=1) if len(flat) > 1
                else np.zeros(flat.shape[1]),
            })
            for q, values in zip(_QUANTILES,
                                 np.quantile(flat, _QUANTILES, axis=0)):
                frame['q%02d' % round(100 * q)] = values
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def save(self, directory, raw_draws=False):
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {'kind': 'forecast', 'n_draws': self.n_draws,
                    'horizons': list(self.horizons)}
        manifest.update(('provenance.%s' % k, v)
                        for k, v in self.provenance.items())
        save_config(manifest, directory / 'manifest.txt')
        self.summary_frame().to_csv(directory / 'forecast_summary.csv',
                                    index=False)
        if raw_draws:
            np.save(directory / 'factor_draws.npy', self.factor_draws)
            np.save(directory / 'latent_draws.npy', self.latent_draws)
            np.save(directory / 'count_draws.npy', self.count_draws)
        return directory


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(np.random.SeedSequence(rng)), rng


def forecast_factors(draw, H, rng):
    '''
    Iterate f_t = kappa + f_{t-1} + eta_t, eta_t ~ N(0, tau_T), H steps past
    the last row of draw.F_T. Returns H x Q.
    '''
    if int(H) < 1:
        raise ValidationError('horizon must be >= 1, got %r' % (H,))
    rng, _ = _as_rng(rng)
    kappa = np.asarray(draw.kappa, dtype=float)
    sd = np.sqrt(np.asarray(draw.tau_T, dtype=float))
    steps = kappa + sd * rng.standard_normal((int(H), len(kappa)))
    return np.asarray(draw.F_T)[-1] + np.cumsum(steps, axis=0)


def _future_offsets(panel, H, offsets):
    n, _, a = panel.dims
    if offsets is None:
        return np.broadcast_to(panel.offsets[:, -1:, :], (n, H, a))
    offsets = np.broadcast_to(np.asarray(offsets, dtype=float), (n, H, a))
    if not (np.isfinite(offsets).all() and (offsets > 0).all()):
        raise ValidationError('future offsets must be finite and positive')
    return offsets


def forecast_counts(draws, panel, H, rng, include_idiosyncratic=True,
                    offsets=None):
    '''
    One predictive path per retained posterior draw: factors forward,
    z = f_T,T+h Lambda_i F_A' (+ N(0, sigma_i^2) when include_idiosyncratic)
    and y ~ Poisson(O e^z). Future offsets default to the last training
    year's.
    '''
    if not draws.has_factors:
        raise ValidationError('forecasting needs factor and loading draws; '
                              'fit with keep_factors=true')
    n, t, a, q, r = draws.dims
    if panel.dims != (n, t, a):
        raise ValidationError('panel dims %s do not match fit dims %s'
                              % (panel.dims, (n, t, a)))
    H = int(H)
    if H < 1:
        raise ValidationError('horizon must be >= 1, got %d' % H)
    rng, seed = _as_rng(rng)
    future_offsets = _future_offsets(panel, H, offsets)

    F_T, F_A = draws.factor_draws('F_T'), draws.factor_draws('F_A')
    Lambda = draws.factor_draws('Lambda')
    kappa, tau_T = draws.trace('kappa'), draws.trace('tau_T')
    sigma2 = draws.trace('sigma2')
    S = draws.n_draws

    factor_draws = np.empty((S, H, q))
    latent_draws = np.empty((S, n, H, a))
    count_draws = np.empty((S, n, H, a), dtype=np.int64)
    n_capped = 0
    for s in range(S):
        last = _Draw(F_T[s], kappa[s], tau_T[s])
        path = forecast_factors(last, H, rng)
        z = np.einsum('hq,iqr,xr->ihx', path, Lambda[s], F_A[s])
        if include_idiosyncratic:
            z = z + np.sqrt(sigma2[s])[:, None, None] * \
                rng.standard_normal(z.shape)
        capped = z > Z_CAP
        if capped.any():
            n_capped += int(capped.sum())
            logger.debug('draw %d: intensity capped at %s', s,
                         [tuple(int(v) for v in c)
                          for c in np.argwhere(capped)[:5]])
        factor_draws[s] = path
        latent_draws[s] = z
        count_draws[s] = rng.poisson(future_offsets *
                                     np.exp(np.minimum(z, Z_CAP)))
    if n_capped:
        logger.warning('%d forecast cell draw(s) had z > %g; intensity '
                       'capped', n_capped, Z_CAP)

    last_year = panel.year_labels[-1] if panel.year_labels else 0
    horizons = tuple(range(1, H + 1))
    return ForecastSet(
        horizons=horizons, factor_draws=factor_draws,
        latent_draws=latent_draws, count_draws=count_draws,
        provenance={'run_id': draws.run_id, 'seed': seed,
                    'include_idiosyncratic': include_idiosyncratic},
        population_labels=panel.population_labels,
        year_labels=tuple(last_year + h for h in horizons),
        age_labels=panel.age_labels)


def forecast_two_step(state, panel, H, offsets=None):
    '''
    Point forecast from a single state, e.g. the initialize_auto estimate:
    time factors move along their drift, f_T,T+h = f_T,T + h kappa, and the
    expected counts O e^z fill a one-draw ForecastSet.
    '''
    n, t, a, q, r = state.dims
    if panel.dims != (n, t, a):
        raise ValidationError('panel dims %s do not match state dims %s'
                              % (panel.dims, (n, t, a)))
    H = int(H)
    if H < 1:
        raise ValidationError('horizon must be >= 1, got %d' % H)
    horizons = tuple(range(1, H + 1))
    path = state.F_T[-1] + np.outer(horizons, state.kappa)
    z = np.einsum('hq,iqr,xr->ihx', path, state.Lambda, state.F_A)
    if (z > Z_CAP).any():
        logger.warning('%d two-step forecast cell(s) had z > %g; intensity '
                       'capped', int((z > Z_CAP).sum()), Z_CAP)
    expected = _future_offsets(panel, H, offsets) * \
        np.exp(np.minimum(z, Z_CAP))
    last_year = panel.year_labels[-1] if panel.year_labels else 0
    return ForecastSet(
        horizons=horizons, factor_draws=path[None],
        latent_draws=z[None], count_draws=expected[None],
        provenance={'run_id': 'two_step', 'seed': None,
                    'include_idiosyncratic': False},
        population_labels=panel.population_labels,
        year_labels=tuple(last_year + h for h in horizons),
        age_labels=panel.age_labels)


@dataclasses.dataclass
class _Draw:
    F_T: np.ndarray
    kappa: np.ndarray
    tau_T: np.ndarray


def _selection(fs, selector):
    n, h, a = fs.count_draws.shape[1:]
    if callable(selector):
        mask = np.zeros((n, h, a), dtype=bool)
        for i, pop in enumerate(fs.population_labels):
            for k, horizon in enumerate(fs.horizons):
                for x, age in enumerate(fs.age_labels):
                    mask[i, k, x] = bool(selector(pop, horizon, age))
    else:
        mask = np.broadcast_to(np.asarray(selector, dtype=bool), (n, h, a))
    return mask


def aggregate_functional(fs, selector, reducer='sum'):
    '''
    Per-draw sum or mean of the count draws over the selected cells.
    selector is a boolean N x H x A mask or a predicate
    (population, horizon, age) -> bool.
    '''
    mask = _selection(fs, selector)
    if not mask.any():
        raise ValidationError('selector matches no forecast cell')
    reducers = {'sum': np.sum, 'mean': np.mean}
    if reducer not in reducers:
        raise ValidationError('reducer must be one of %s, got %r'
                              % (sorted(reducers), reducer))
    selected = fs.count_draws[:, mask].astype(float)
    return reducers[reducer](selected, axis=1)
