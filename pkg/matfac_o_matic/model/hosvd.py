# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Ex-post orthonormal time and age components of the fitted surfaces, for
# interpretation. The sampler's factors are only identified up to rotation.

import dataclasses
import logging
import pathlib

import numpy as np
import pandas as pd
from scipy import linalg

from matfac_o_matic.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class HosvdResult:
    time_components: np.ndarray
    age_components: np.ndarray
    time_shares: np.ndarray
    age_shares: np.ndarray

    def save(self, directory, year_labels=None, age_labels=None):
        '''
        Write factors_time.csv, factors_age.csv and explained.csv.
        '''
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        t, a = len(self.time_components), len(self.age_components)
        time = pd.DataFrame(
            self.time_components,
            columns=['time_%d' % (q + 1)
                     for q in range(self.time_components.shape[1])])
        time.insert(0, 'year', list(year_labels) if year_labels is not None
                    else list(range(t)))
        age = pd.DataFrame(
            self.age_components,
            columns=['age_%d' % (r + 1)
                     for r in range(self.age_components.shape[1])])
        age.insert(0, 'age', list(age_labels) if age_labels is not None
                   else list(range(a)))
        explained = pd.DataFrame(
            [('time', k + 1, s) for k, s in enumerate(self.time_shares)] +
            [('age', k + 1, s) for k, s in enumerate(self.age_shares)],
            columns=['mode', 'component', 'share'])
        time.to_csv(directory / 'factors_time.csv', index=False)
        age.to_csv(directory / 'factors_age.csv', index=False)
        explained.to_csv(directory / 'explained.csv', index=False)
        return directory


def center_fitted_array(fitted):
    '''
    Remove each population's mean level from a T x A x N array.
    '''
    fitted = np.asarray(fitted, dtype=float)
    if fitted.ndim != 3 or min(fitted.shape) < 1:
        raise ValidationError('expected a nonempty T x A x N array, got '
                              'shape %s' % (fitted.shape,))
    means = fitted.mean(axis=(0, 1))
    return fitted - means[None, None, :], means


def unfold(tensor, mode):
    '''
    Mode-k matricization: rows indexed by axis k.
    '''
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def _fix_signs(components):
    pivot = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[pivot, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def _leading(matrix, k, what):
    u, s, _ = linalg.svd(matrix, full_matrices=False)
    energy = s ** 2
    total = energy.sum()
    tol = (s[0] if len(s) else 0.0) * max(matrix.shape) * \
        np.finfo(float).eps
    rank = int(np.sum(s > tol))
    if k > rank:
        logger.warning('%s mode has numerical rank %d; keeping %d of %d '
                       'requested components', what, rank, rank, k)
        k = rank
    shares = energy[:k] / total if total > 0 else np.zeros(k)
    return _fix_signs(u[:, :k]), shares


def hosvd_modes(centered, Q, R):
    '''
    Leading left singular vectors of the time-mode (T x AN) and age-mode
    (A x TN) unfoldings, ordered by singular value, each component signed
    so its largest-magnitude entry is positive.
    '''
    centered = np.asarray(centered, dtype=float)
    t, a, _ = centered.shape
    if not (1 <= Q <= t and 1 <= R <= a):
        raise ValidationError('need 1 <= Q <= T and 1 <= R <= A, got Q=%d '
                              'R=%d for T=%d A=%d' % (Q, R, t, a))
    time, time_shares = _leading(unfold(centered, 0), Q, 'time')
    age, age_shares = _leading(unfold(centered, 1), R, 'age')
    return HosvdResult(time_components=time, age_components=age,
                       time_shares=time_shares, age_shares=age_shares)


def project(centered, result):
    '''
    Multilinear projection onto the extracted time and age subspaces.
    '''
    P_T = result.time_components @ result.time_components.T
    P_A = result.age_components @ result.age_components.T
    return np.einsum('ts,sbn,ab->tan', P_T, centered, P_A)


def fitted_array(fitted_means):
    '''
    N x T x A posterior mean surfaces to the T x A x N layout used here.
    '''
    return np.transpose(np.asarray(fitted_means, dtype=float), (1, 2, 0))
