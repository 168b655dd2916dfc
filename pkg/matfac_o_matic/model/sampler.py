# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Data-augmentation MCMC for the Poisson-lognormal matrix factor model.
#
# Conditional on Z the model is a Gaussian bilinear factor model, so every
# block except the latent z has a closed-form conditional. Only
# update_latent_z and poisson_loglik_cell ever look at the counts.

import logging
import math
import warnings

import numpy as np
from scipy import linalg, special

from matfac_o_matic.errors import SamplerError, ValidationError
from matfac_o_matic.model.panel import panel_digest
from matfac_o_matic.model.priors import (build_rw_precision,
                                         drift_canonical_shift)
from matfac_o_matic.model.state import (AdaptState, DrawStore, ModelState,
                                        SamplerConfig)

logger = logging.getLogger(__name__)

# Loading energy below which a factor column carries no likelihood
# information and its conditional precision is ridge-stabilized.
DEGENERATE_ENERGY = 1e-12


def fitted_mean(state, i):
    return state.F_T @ state.Lambda[i] @ state.F_A.T


def poisson_loglik_cell(y, O, z):
    '''
    log P(y; O e^z), elementwise.
    '''
    y = np.asarray(y, dtype=float)
    with np.errstate(over='ignore'):
        return y * (np.log(O) + z) - O * np.exp(z) - special.gammaln(y + 1.0)


def panel_loglik(panel, Z):
    cells = poisson_loglik_cell(panel.counts, panel.offsets, Z)
    return float(cells[panel.mask].sum())


# ---------------------------------------------------------------------------
# Gaussian helpers


def _cholesky(precision, ridge, what):
    '''
    Lower Cholesky factor; retries once with a ridge before giving up.
    '''
    try:
        return linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError:
        logger.warning('%s: precision not SPD, adding ridge %g', what, ridge)
    try:
        return linalg.cholesky(precision + ridge * np.eye(len(precision)),
                               lower=True)
    except linalg.LinAlgError:
        eig = np.linalg.eigvalsh(precision)
        raise SamplerError('%s: precision not SPD after ridge' % what,
                           {'min_eigenvalue': float(eig.min()),
                            'max_eigenvalue': float(eig.max())})


def _draw_dense(precision, canonical, rng, ridge, what):
    chol = _cholesky(precision, ridge, what)
    mean = linalg.cho_solve((chol, True), canonical)
    noise = linalg.solve_triangular(chol.T, rng.standard_normal(len(mean)),
                                    lower=False)
    return mean + noise


def _draw_banded(band, canonical, rng, ridge, what):
    '''
    Draw from N(P^-1 b, P^-1) for a tridiagonal P in lower banded storage.
    '''
    try:
        chol = linalg.cholesky_banded(band, lower=True)
    except linalg.LinAlgError:
        band = band.copy()
        band[0] += ridge
        logger.warning('%s: banded precision not SPD, adding ridge %g',
                       what, ridge)
        try:
            chol = linalg.cholesky_banded(band, lower=True)
        except linalg.LinAlgError:
            raise SamplerError('%s: precision not SPD after ridge' % what,
                               {'min_diagonal': float(band[0].min())})
    mean = linalg.cho_solve_banded((chol, True), canonical)
    upper = np.zeros_like(chol)
    upper[0, 1:] = chol[1, :-1]
    upper[1] = chol[0]
    noise = linalg.solve_banded((0, 1), upper,
                                rng.standard_normal(len(mean)))
    return mean + noise


# ---------------------------------------------------------------------------
# Latent z


def update_latent_z(state, panel, adapt, rng):
    '''
    One random-walk Metropolis step per observed cell, targeting
    P(y; O e^z) N(z; m, sigma_i^2). Held-out cells are drawn exactly from
    N(m, sigma_i^2). Step sizes adapt in batches until the adaptation
    horizon (the end of burn-in) is reached.
    '''
    Z = state.Z
    m = state.fitted_means()
    var = state.sigma2[:, None, None]
    observed = panel.mask
    y = panel.counts
    O = panel.offsets

    proposal = Z + np.exp(adapt.log_step) * rng.standard_normal(Z.shape)
    log_u = np.log(rng.random(Z.shape))
    exact = m + np.sqrt(var) * rng.standard_normal(Z.shape)

    with np.errstate(over='ignore', invalid='ignore'):
        energy = (y * (proposal - Z) - O * (np.exp(proposal) - np.exp(Z))
                  - ((proposal - m) ** 2 - (Z - m) ** 2) / (2.0 * var))
    finite = np.isfinite(energy)
    broken = observed & ~finite
    if broken.any():
        logger.warning('latent z: %d proposal(s) with non-finite energy '
                       'rejected, first at cell %s', int(broken.sum()),
                       tuple(int(v) for v in np.argwhere(broken)[0]))
    accept = observed & finite & (log_u < np.where(finite, energy, -np.inf))

    state.Z = np.where(accept, proposal, np.where(observed, Z, exact))
    adapt.proposal_counts += observed
    adapt.accept_counts += accept
    adapt.batch_accepts += accept
    adapt.iterations += 1

    if adapt.iterations <= adapt.adaptation_horizon and \
            adapt.iterations % adapt.batch_size == 0:
        adapt.n_batches += 1
        delta = min(0.05, adapt.n_batches ** -0.5)
        rate = adapt.batch_accepts / adapt.batch_size
        step = np.where(rate > adapt.target_accept, delta, -delta)
        adapt.log_step = np.where(observed, adapt.log_step + step,
                                  adapt.log_step)
        adapt.batch_accepts[...] = 0
    return state.Z, adapt


# ---------------------------------------------------------------------------
# Loadings


def loading_moments(state, i, prior_var=1.0):
    '''
    Canonical form (precision, linear term) of the vec(Lambda_i)
    conditional. Uses (F_A x F_T)'(F_A x F_T) = (F_A'F_A) x (F_T'F_T) and
    (F_A x F_T)' vec(Z_i) = vec(F_T' Z_i F_A).
    '''
    q, r = state.Lambda.shape[1:]
    prior_var = np.broadcast_to(np.asarray(prior_var, dtype=float), (q * r,))
    gram = np.kron(state.F_A.T @ state.F_A, state.F_T.T @ state.F_T)
    precision = np.diag(1.0 / prior_var) + gram / state.sigma2[i]
    canonical = (state.F_T.T @ state.Z[i] @ state.F_A).reshape(
        -1, order='F') / state.sigma2[i]
    return precision, canonical


def update_loadings(state, i, rng, prior_var=1.0, ridge=1e-8):
    if not state.sigma2[i] > 0:
        raise ValidationError('sigma2[%d] must be positive' % i)
    precision, canonical = loading_moments(state, i, prior_var)
    q, r = state.Lambda.shape[1:]
    draw = _draw_dense(precision, canonical, rng, ridge, 'loadings[%d]' % i)
    state.Lambda[i] = draw.reshape((q, r), order='F')
    return state.Lambda[i]


# ---------------------------------------------------------------------------
# Factors


def _loading_energy(vectors):
    return float(np.einsum('ij,ij->', vectors, vectors))


def age_factor_moments(state, r, omega=None):
    '''
    Precision scale (1/tau_A,r, s) with P = Omega_A / tau_A,r + s I_A, and
    the linear term sum_i Ztilde_i' F_T lambda_i,.,r / sigma_i^2.
    '''
    a = state.F_A.shape[0]
    g = state.F_T @ state.Lambda[:, :, r].T          # T x N
    g = g.T                                          # N x T
    own = g[:, :, None] * state.F_A[None, None, :, r]
    working = state.Z - state.fitted_means() + own
    weights = 1.0 / state.sigma2
    s = float(np.sum(weights * np.einsum('it,it->i', g, g)))
    canonical = np.einsum('i,itx,it->x', weights, working, g)
    omega = build_rw_precision(a) if omega is None else omega
    return omega, 1.0 / state.tau_A[r], s, canonical, _loading_energy(g)


def update_age_factor(state, r, rng, ridge=1e-8, omega=None,
                      initial_age_var=None):
    omega, prior_scale, s, canonical, energy = \
        age_factor_moments(state, r, omega)
    band = omega.banded(scale=prior_scale, shift=s)
    if initial_age_var is not None:
        band[0, 0] += 1.0 / initial_age_var
    if energy < DEGENERATE_ENERGY:
        logger.warning('age factor %d: loading energy %.3g, conditional is '
                       'the ridge-stabilized prior', r, energy)
        band[0] += ridge
    state.F_A[:, r] = _draw_banded(band, canonical, rng, ridge,
                                   'age factor %d' % r)
    return state.F_A[:, r]


def time_factor_moments(state, q, omega=None):
    '''
    Same as age_factor_moments for column q of F_T; the linear term carries
    the drift shift h_0,q.
    '''
    t = state.F_T.shape[0]
    g = (state.Lambda[:, q, :] @ state.F_A.T)        # N x A
    own = state.F_T[None, :, q, None] * g[:, None, :]
    working = state.Z - state.fitted_means() + own
    weights = 1.0 / state.sigma2
    s = float(np.sum(weights * np.einsum('ix,ix->i', g, g)))
    canonical = np.einsum('i,itx,ix->t', weights, working, g)
    canonical = canonical + drift_canonical_shift(state.kappa[q],
                                                  state.tau_T[q], t)
    omega = build_rw_precision(t) if omega is None else omega
    return omega, 1.0 / state.tau_T[q], s, canonical, _loading_energy(g)


def update_time_factor(state, q, rng, ridge=1e-8, omega=None,
                       initial_time_var=None):
    omega, prior_scale, s, canonical, energy = \
        time_factor_moments(state, q, omega)
    band = omega.banded(scale=prior_scale, shift=s)
    if initial_time_var is not None:
        band[0, 0] += 1.0 / initial_time_var
    if energy < DEGENERATE_ENERGY:
        logger.warning('time factor %d: loading energy %.3g, conditional is '
                       'the ridge-stabilized prior', q, energy)
        band[0] += ridge
    state.F_T[:, q] = _draw_banded(band, canonical, rng, ridge,
                                   'time factor %d' % q)
    return state.F_T[:, q]


def update_drift(state, q, rng, prior_var=None):
    '''
    kappa_q ~ N(mean of first differences, tau_T,q / (T - 1)) under the
    flat prior; prior_var switches to a N(0, prior_var) prior.
    '''
    t = state.F_T.shape[0]
    if t < 2:
        raise ValidationError('drift update needs T >= 2')
    diffs = np.diff(state.F_T[:, q])
    if prior_var is None:
        mean, var = diffs.mean(), state.tau_T[q] / (t - 1)
    else:
        precision = (t - 1) / state.tau_T[q] + 1.0 / prior_var
        var = 1.0 / precision
        mean = var * diffs.sum() / state.tau_T[q]
    state.kappa[q] = mean + math.sqrt(var) * rng.standard_normal()
    return state.kappa[q]


def _draw_inverse_gamma(shape, scale, rng, floor, what):
    if shape <= 0 or scale <= 0:
        logger.warning('%s: degenerate inverse-gamma (shape %.3g, scale '
                       '%.3g), floored at %g', what, shape, scale, floor)
        return floor
    return max(scale / rng.standard_gamma(shape), floor)


def smoothing_variance_moments(state):
    '''
    Inverse-gamma (shape, scale) pairs for tau_T and tau_A before any
    proper-prior terms.
    '''
    t, a = state.F_T.shape[0], state.F_A.shape[0]
    resid_T = np.diff(state.F_T, axis=0) - state.kappa[None, :]
    diff_A = np.diff(state.F_A, axis=0)
    tau_T = [((t - 1) / 2.0, 0.5 * float(np.sum(resid_T[:, q] ** 2)))
             for q in range(state.F_T.shape[1])]
    tau_A = [((a - 1) / 2.0, 0.5 * float(np.sum(diff_A[:, r] ** 2)))
             for r in range(state.F_A.shape[1])]
    return tau_T, tau_A


def update_smoothing_variances(state, rng, floor=1e-10, prior_T=(0.0, 0.0),
                               prior_A=(0.0, 0.0)):
    if state.F_T.shape[0] < 2 or state.F_A.shape[0] < 2:
        raise ValidationError('smoothing variances need T >= 2 and A >= 2')
    tau_T, tau_A = smoothing_variance_moments(state)
    for q, (shape, scale) in enumerate(tau_T):
        state.tau_T[q] = _draw_inverse_gamma(
            shape + prior_T[0], scale + prior_T[1], rng, floor,
            'tau_T[%d]' % q)
    for r, (shape, scale) in enumerate(tau_A):
        state.tau_A[r] = _draw_inverse_gamma(
            shape + prior_A[0], scale + prior_A[1], rng, floor,
            'tau_A[%d]' % r)
    return state.tau_T, state.tau_A


def noise_variance_moments(state, panel, c0=2.5, C0=1.5):
    resid = np.where(panel.mask, state.Z - state.fitted_means(), 0.0)
    n_obs = panel.mask.sum(axis=(1, 2))
    return c0 + 0.5 * n_obs, C0 + 0.5 * np.sum(resid ** 2, axis=(1, 2))


def update_noise_variances(state, panel, rng, c0=2.5, C0=1.5):
    '''
    sigma_i^2 ~ IG(c0 + n_i/2, C0 + RSS_i/2) over observed cells, followed
    by a fresh draw of the held-out z of population i under the new
    variance, so (sigma^2, held-out z) move as one block.
    '''
    if not (c0 > 0 and C0 > 0):
        raise ValidationError('c0 and C0 must be positive')
    shape, scale = noise_variance_moments(state, panel, c0, C0)
    state.sigma2 = scale / rng.standard_gamma(shape)
    held_out = ~panel.mask
    if held_out.any():
        m = state.fitted_means()
        exact = m + np.sqrt(state.sigma2)[:, None, None] * \
            rng.standard_normal(m.shape)
        state.Z = np.where(held_out, exact, state.Z)
    return state.sigma2


# ---------------------------------------------------------------------------
# Initialization


def _leading_vectors(matrix, k, rng, what):
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    tol = s.max(initial=0.0) * max(matrix.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    if rank >= k:
        return u[:, :k]
    logger.warning('%s: only %d positive singular value(s) for %d factors, '
                   'padding with small random columns', what, rank, k)
    pad = 1e-3 * rng.standard_normal((matrix.shape[0], k - rank))
    return np.hstack([u[:, :rank], pad])


def initialize_auto(panel, prior, rng=None):
    '''
    Two-step starting point: leading singular vectors of the time- and
    age-mode unfoldings of log((y + 0.5) / O), then least-squares loadings
    per population and moment estimates for the variances.

    The unfoldings are not centered. The model has no intercept, so the
    level of the surface has to live in the factors; a constant surface
    gives constant factors.
    '''
    rng = np.random.default_rng(0) if rng is None else rng
    n, t, a = panel.dims
    q, r = prior.Q, prior.R
    Z = np.log((panel.counts + 0.5) / panel.offsets)
    if not panel.mask.all():
        observed = np.where(panel.mask, Z, np.nan)
        with warnings.catch_warnings():
            # All-NaN slices are filled below.
            warnings.simplefilter("ignore", RuntimeWarning)
            by_age = np.nanmean(observed, axis=1, keepdims=True)
            by_pop = np.nanmean(observed, axis=(1, 2), keepdims=True)
        fill = np.where(np.isnan(by_age), by_pop, by_age)
        fill = np.where(np.isnan(fill), math.log(0.5), fill)
        Z = np.where(panel.mask, Z, np.broadcast_to(fill, Z.shape))

    time_unfolding = Z.transpose(1, 0, 2).reshape(t, n * a)
    age_unfolding = Z.transpose(2, 0, 1).reshape(a, n * t)
    F_T = math.sqrt(t) * _leading_vectors(time_unfolding, q, rng,
                                          'time factors')
    F_A = math.sqrt(a) * _leading_vectors(age_unfolding, r, rng,
                                          'age factors')
    left, right = np.linalg.pinv(F_T), np.linalg.pinv(F_A)
    Lambda = np.einsum('qt,itx,rx->iqr', left, Z, right)

    diffs = np.diff(F_T, axis=0)
    kappa = diffs.mean(axis=0)
    tau_T = np.maximum(np.mean((diffs - kappa) ** 2, axis=0), 1e-6)
    tau_A = np.maximum(np.mean(np.diff(F_A, axis=0) ** 2, axis=0), 1e-6)
    resid = (Z - (F_T @ Lambda) @ F_A.T) ** 2
    n_obs = np.maximum(panel.mask.sum(axis=(1, 2)), 1)
    sigma2 = np.maximum(np.where(panel.mask, resid, 0.0).sum(axis=(1, 2))
                        / n_obs, 1e-6)
    return ModelState(Z=Z, F_T=F_T, F_A=F_A, Lambda=Lambda, kappa=kappa,
                      tau_T=tau_T, tau_A=tau_A, sigma2=sigma2)


# ---------------------------------------------------------------------------
# Chain


class GibbsSweep(object):
    '''
    Binds one chain's panel, prior, settings and RNG. Each public method is
    one block of the sweep; run_chain calls them by name in
    config.update_order.
    '''

    def __init__(self, panel, prior, config, state, rng):
        n, t, a = panel.dims
        self.panel = panel
        self.prior = prior
        self.config = config
        self.state = state
        self.rng = rng
        self.omega_T = build_rw_precision(t)
        self.omega_A = build_rw_precision(a)
        self.loading_var = prior.loading_variances(n)
        self.adapt = AdaptState.start(
            (n, t, a), initial_step=config.initial_step,
            target_accept=config.target_accept,
            adaptation_horizon=config.n_burnin,
            batch_size=config.batch_size)

    def latent(self):
        update_latent_z(self.state, self.panel, self.adapt, self.rng)

    def loadings(self):
        for i in range(self.state.Lambda.shape[0]):
            update_loadings(self.state, i, self.rng, self.loading_var[i],
                            self.config.ridge)

    def age_factors(self):
        initial_var = None if self.prior.flat_initial_age else \
            self.prior.initial_age_var
        for r in range(self.prior.R):
            update_age_factor(self.state, r, self.rng, self.config.ridge,
                              self.omega_A, initial_var)

    def time_factors(self):
        initial_var = None if self.prior.flat_initial_time else \
            self.prior.initial_time_var
        for q in range(self.prior.Q):
            update_time_factor(self.state, q, self.rng, self.config.ridge,
                               self.omega_T, initial_var)

    def drifts(self):
        prior_var = None if self.prior.flat_kappa else self.prior.kappa_var
        for q in range(self.prior.Q):
            update_drift(self.state, q, self.rng, prior_var)

    def smoothing_variances(self):
        update_smoothing_variances(self.state, self.rng,
                                   self.config.tau_floor,
                                   self.prior.tau_prior('T'),
                                   self.prior.tau_prior('A'))

    def noise_variances(self):
        update_noise_variances(self.state, self.panel, self.rng,
                               self.prior.c0, self.prior.C0)

    def sweep(self):
        for step in self.config.update_order:
            getattr(self, step)()


def _check_dims(panel, prior, state):
    n, t, a = panel.dims
    if t < 2 or a < 2:
        raise ValidationError('the sampler needs T >= 2 and A >= 2, got '
                              'T=%d A=%d' % (t, a))
    if state is not None and state.dims != (n, t, a, prior.Q, prior.R):
        raise ValidationError('initial state dims %s do not match panel/prior '
                              '%s' % (state.dims, (n, t, a, prior.Q,
                                                   prior.R)))


def run_chain(panel, prior, config=None, init='auto', watch_mask=None):
    '''
    Run one chain and return its DrawStore. A SamplerError ends the chain
    early; the partial store then carries the error message. Latent draws at
    watch_mask cells are kept for every retained draw.
    '''
    config = config or SamplerConfig()
    state = None if isinstance(init, str) else init
    _check_dims(panel, prior, state)
    rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed))
    if state is None:
        if init != 'auto':
            raise ValidationError('init must be a ModelState or "auto"')
        state = initialize_auto(panel, prior, rng)
    else:
        state = state.copy()
        if state.Z is None:
            raise ValidationError('initial state needs Z')

    n, t, a = panel.dims
    store = DrawStore((n, t, a, prior.Q, prior.R), config,
                      input_digest=panel_digest(panel),
                      watch_mask=watch_mask)
    sweep = GibbsSweep(panel, prior, config, state, rng)
    logger.info('Running chain: N=%d T=%d A=%d Q=%d R=%d, %d iterations '
                '(%d burn-in, thin %d)', n, t, a, prior.Q, prior.R,
                config.n_iterations, config.n_burnin, config.thin)

    for iteration in range(config.n_iterations):
        try:
            sweep.sweep()
        except SamplerError as e:
            store.error = 'iteration %d: %s %s' % (iteration, e,
                                                  e.diagnostics)
            logger.error('Chain aborted at %s', store.error)
            break
        if iteration + 1 == config.n_burnin:
            # Post-adaptation acceptance is what gets reported.
            sweep.adapt.accept_counts[...] = 0
            sweep.adapt.proposal_counts[...] = 0
        if config.is_retained(iteration):
            store.record(state, panel_loglik(panel, state.Z), panel.offsets)
        store.completed_iterations = iteration + 1
        if config.log_every and (iteration + 1) % config.log_every == 0:
            logger.info('iteration %d/%d, mean acceptance %.3f',
                        iteration + 1, config.n_iterations,
                        float(np.nanmean(sweep.adapt.acceptance_rates())))

    store.accept_rate = sweep.adapt.acceptance_rates()
    return store
