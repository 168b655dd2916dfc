# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import numpy as np
import pytest

from matfac_o_matic.model.panel import panel_from_arrays
from matfac_o_matic.model.state import ModelState


def random_state(rng, N=2, T=4, A=5, Q=2, R=2, with_z=True):
    F_T = rng.standard_normal((T, Q))
    F_A = rng.standard_normal((A, R))
    Lambda = rng.standard_normal((N, Q, R))
    Z = (F_T @ Lambda) @ F_A.T + 0.3 * rng.standard_normal((N, T, A)) \
        if with_z else None
    return ModelState(Z=Z, F_T=F_T, F_A=F_A, Lambda=Lambda,
                      kappa=0.1 * rng.standard_normal(Q),
                      tau_T=rng.uniform(0.05, 0.5, Q),
                      tau_A=rng.uniform(0.05, 0.5, R),
                      sigma2=rng.uniform(0.1, 0.8, N))


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


@pytest.fixture
def make_state():
    return random_state


@pytest.fixture
def state(rng):
    return random_state(rng)


@pytest.fixture
def small_panel(rng):
    '''
    Three populations, eight years, six ages with a smooth log-linear
    surface and exposure 50.
    '''
    n, t, a = 3, 8, 6
    years = np.arange(t)[None, :, None]
    ages = np.arange(a)[None, None, :]
    level = np.array([0.2, -0.1, 0.4])[:, None, None]
    log_rate = level - 0.05 * years + 0.15 * ages - 2.0
    offsets = np.full((n, t, a), 50.0)
    counts = rng.poisson(offsets * np.exp(log_rate))
    return panel_from_arrays(counts, offsets,
                             population_labels=['north', 'south', 'west'],
                             first_year=2001)
