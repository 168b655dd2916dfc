# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Prior hyperparameters plus the random-walk / ICAR structure matrices.
# Improper priors (ICAR, Jeffreys, flat drift) never appear as normalized
# densities; they only contribute precision and linear-shift terms to the
# sampler's Gaussian conditionals.

import dataclasses
from typing import Union

import numpy as np

from matfac_o_matic.config import check_keys
from matfac_o_matic.errors import ValidationError


@dataclasses.dataclass
class PriorSpec:
    '''
    Q time factors, R age factors, IG(c0, C0) on the noise variances and
    N(0, L0) elementwise on the loadings. The flags select the default
    improper priors; when switched off, the proper alternatives named by the
    *_shape/*_scale/*_var fields are used instead.
    '''
    Q: int
    R: int
    c0: float = 2.5
    C0: float = 1.5
    L0: Union[float, np.ndarray] = 1.0
    flat_kappa: bool = True
    flat_initial_time: bool = True
    flat_initial_age: bool = True
    jeffreys_tau_T: bool = True
    jeffreys_tau_A: bool = True
    kappa_var: float = 1.0
    initial_time_var: float = 1.0
    initial_age_var: float = 1.0
    tau_shape: float = 1.0
    tau_scale: float = 0.01

    def __post_init__(self):
        if int(self.Q) < 1 or int(self.R) < 1:
            raise ValidationError('Q and R must be >= 1, got Q=%s R=%s'
                                  % (self.Q, self.R))
        self.Q, self.R = int(self.Q), int(self.R)
        if not (self.c0 > 0 and self.C0 > 0):
            raise ValidationError('c0 and C0 must be positive')
        if np.any(np.asarray(self.L0, dtype=float) <= 0):
            raise ValidationError('all L0 entries must be positive')
        for name in ('kappa_var', 'initial_time_var', 'initial_age_var',
                     'tau_shape', 'tau_scale'):
            if not getattr(self, name) > 0:
                raise ValidationError('%s must be positive' % name)

    def loading_variances(self, n):
        '''
        Prior variances of vec(Lambda_i), shape (n, Q*R).
        '''
        qr = self.Q * self.R
        l0 = np.asarray(self.L0, dtype=float)
        if l0.ndim == 0:
            return np.full((n, qr), float(l0))
        if l0.shape == (qr,):
            return np.tile(l0, (n, 1))
        if l0.shape == (self.Q, self.R):
            return np.tile(l0.reshape(-1, order='F'), (n, 1))
        if l0.shape == (n, qr):
            return l0.copy()
        raise ValidationError('L0 of shape %s does not fit N=%d, Q=%d, R=%d'
                              % (l0.shape, n, self.Q, self.R))

    def tau_prior(self, which):
        '''
        (shape, scale) added to the inverse-gamma conditional of a
        smoothing variance; Jeffreys contributes nothing.
        '''
        jeffreys = self.jeffreys_tau_T if which == 'T' else \
            self.jeffreys_tau_A
        if jeffreys:
            return 0.0, 0.0
        return self.tau_shape, self.tau_scale

    _KEYS = ('Q', 'R', 'c0', 'C0', 'L0', 'flat_kappa', 'flat_initial_time',
             'flat_initial_age', 'initial_age_var',
             'jeffreys_tau_T', 'jeffreys_tau_A', 'kappa_var',
             'initial_time_var', 'tau_shape', 'tau_scale')

    @classmethod
    def from_config(cls, config, **overrides):
        config = dict(config, **overrides)
        check_keys(config, cls._KEYS, 'prior')
        if 'Q' not in config or 'R' not in config:
            raise ValidationError('prior config needs Q and R')
        if isinstance(config.get('L0'), list):
            config['L0'] = np.asarray(config['L0'], dtype=float)
        return cls(**config)

    def to_config(self):
        config = dataclasses.asdict(self)
        l0 = np.asarray(self.L0)
        config['L0'] = float(l0) if l0.ndim == 0 else l0.ravel().tolist()
        return config


@dataclasses.dataclass(frozen=True)
class RwPrecision:
    dim: int
    matrix: np.ndarray

    def banded(self, scale=1.0, shift=0.0):
        '''
        Lower banded storage of scale * matrix + shift * I for
        scipy.linalg.cholesky_banded(lower=True).
        '''
        band = np.zeros((2, self.dim))
        band[0] = scale * np.diag(self.matrix) + shift
        band[1, :-1] = scale * np.diag(self.matrix, -1)
        return band


def first_difference_matrix(m):
    '''
    The (m-1) x m matrix D with (D f)_t = f_{t+1} - f_t.
    '''
    if m < 2:
        raise ValidationError('first differences need m >= 2, got %d' % m)
    return np.eye(m, k=1)[:-1] - np.eye(m)[:-1]


def build_rw_precision(m):
    '''
    First-order random walk / ICAR precision on a chain of length m:
    tridiagonal with diagonal (1, 2, ..., 2, 1) and -1 off the diagonal.
    Equals D'D; rank m - 1.
    '''
    if int(m) != m or m < 2:
        raise ValidationError('random-walk precision needs M >= 2, got %r'
                              % (m,))
    m = int(m)
    diag = np.full(m, 2.0)
    diag[0] = diag[-1] = 1.0
    matrix = np.diag(diag) - np.eye(m, k=1) - np.eye(m, k=-1)
    return RwPrecision(dim=m, matrix=matrix)


def icar_conditional(f, x, tau):
    '''
    Full conditional of element x (1-based) of an ICAR vector: the mean of
    its chain neighbours and variance tau / n_x.
    '''
    f = np.asarray(f, dtype=float)
    a = f.shape[0]
    if a < 2 or not 1 <= x <= a:
        raise ValidationError('ICAR conditional needs A >= 2 and 1 <= x <= A')
    k = x - 1
    neighbours = [j for j in (k - 1, k + 1) if 0 <= j < a]
    n_x = len(neighbours)
    return float(f[neighbours].mean()), float(tau) / n_x


def drift_canonical_shift(kappa, tau, t):
    '''
    Linear term the RW-with-drift prior adds to the time-factor conditional,
    (kappa / tau) * D'1 = (kappa / tau) * (-1, 0, ..., 0, 1).
    '''
    if t < 2:
        raise ValidationError('drift shift needs T >= 2, got %d' % t)
    if not tau > 0:
        raise ValidationError('tau must be positive')
    shift = np.zeros(t)
    shift[0] = -kappa / tau
    shift[-1] = kappa / tau
    return shift
