# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import logging

import numpy as np
import pandas as pd
import pytest

from matfac_o_matic.errors import ValidationError
from matfac_o_matic.model.hosvd import (center_fitted_array, fitted_array,
                                        hosvd_modes, project, unfold)


def _orthonormal(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def _signed(columns):
    pivot = np.argmax(np.abs(columns), axis=0)
    return columns * np.sign(columns[pivot, np.arange(columns.shape[1])])


# -- centering --------------------------------------------------------------


def test_constant_tensor_centers_to_zero():
    fitted = np.full((4, 3, 2), 2.5)
    centered, means = center_fitted_array(fitted)
    assert (centered == 0).all()
    np.testing.assert_array_equal(means, [2.5, 2.5])


def test_centering_is_idempotent_and_zeroes_slice_means(rng):
    fitted = rng.normal(3.0, 2.0, size=(7, 5, 4))
    centered, means = center_fitted_array(fitted)
    assert np.abs(centered.mean(axis=(0, 1))).max() < 1e-12
    np.testing.assert_allclose(means, fitted.mean(axis=(0, 1)))
    again, shift = center_fitted_array(centered)
    np.testing.assert_allclose(again, centered, atol=1e-14)
    assert np.abs(shift).max() < 1e-12


def test_centering_needs_a_3d_array():
    with pytest.raises(ValidationError):
        center_fitted_array(np.zeros((3, 4)))
    with pytest.raises(ValidationError):
        center_fitted_array(np.zeros((3, 0, 2)))


def test_fitted_array_and_unfold_layout(rng):
    means = rng.standard_normal((3, 4, 5))
    tensor = fitted_array(means)
    assert tensor.shape == (4, 5, 3)
    assert tensor[2, 1, 0] == means[0, 2, 1]
    age = unfold(tensor, 1)
    assert age.shape == (5, 12)
    np.testing.assert_array_equal(age[3], tensor[:, 3, :].ravel())
    assert unfold(tensor, 0).shape == (4, 15)


# -- components -------------------------------------------------------------


def test_rank_one_tensor_components_are_its_factors():
    u = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    v = np.array([1.0, -1.0, 2.0, 3.0, -2.0])
    w = np.arange(1.0, 9.0)
    tensor = np.einsum('t,x,i->txi', u, v, w)
    result = hosvd_modes(tensor, 1, 1)
    assert abs(np.corrcoef(result.time_components[:, 0], u)[0, 1]) == \
        pytest.approx(1.0, abs=1e-12)
    assert abs(np.corrcoef(result.age_components[:, 0], v)[0, 1]) == \
        pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(result.time_shares, [1.0])


def test_orthogonal_structure_is_recovered_exactly(rng):
    # Singular values 5 and 2 on orthonormal time, age and population axes.
    U, V, W = (_orthonormal(rng, 6, 2), _orthonormal(rng, 5, 2),
               _orthonormal(rng, 4, 2))
    tensor = 5.0 * np.einsum('t,x,i->txi', U[:, 0], V[:, 0], W[:, 0]) + \
        2.0 * np.einsum('t,x,i->txi', U[:, 1], V[:, 1], W[:, 1])
    result = hosvd_modes(tensor, 2, 2)
    np.testing.assert_allclose(result.time_components, _signed(U),
                               atol=1e-10)
    np.testing.assert_allclose(result.age_components, _signed(V),
                               atol=1e-10)
    np.testing.assert_allclose(result.time_shares, [25 / 29, 4 / 29])


def test_components_are_orthonormal(rng):
    for _ in range(1000):
        t, a, n = rng.integers(2, 7, size=3)
        centered, _ = center_fitted_array(rng.standard_normal((t, a, n)))
        Q, R = int(rng.integers(1, t + 1)), int(rng.integers(1, a + 1))
        result = hosvd_modes(centered, Q, R)
        for comps in (result.time_components, result.age_components):
            np.testing.assert_allclose(comps.T @ comps,
                                       np.eye(comps.shape[1]), atol=1e-10)


def test_shares_are_ordered_and_bounded(rng):
    centered, _ = center_fitted_array(rng.standard_normal((8, 6, 5)))
    result = hosvd_modes(centered, 8, 6)
    for shares in (result.time_shares, result.age_shares):
        assert (np.diff(shares) <= 1e-15).all()
        assert shares.sum() <= 1.0 + 1e-12
        assert shares.sum() == pytest.approx(1.0)


def test_reconstruction_error_never_grows_with_more_components(rng):
    centered, _ = center_fitted_array(rng.standard_normal((7, 6, 4)))

    def error(Q, R):
        return np.linalg.norm(centered - project(centered,
                                                 hosvd_modes(centered, Q, R)))

    by_q = [error(Q, 3) for Q in range(1, 8)]
    by_r = [error(3, R) for R in range(1, 7)]
    assert all(b <= a + 1e-12 for a, b in zip(by_q, by_q[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(by_r, by_r[1:]))
    assert error(7, 6) < 1e-10


def test_sign_convention(rng):
    centered, _ = center_fitted_array(rng.standard_normal((6, 5, 3)))
    result = hosvd_modes(centered, 3, 3)
    for comps in (result.time_components, result.age_components):
        pivot = np.argmax(np.abs(comps), axis=0)
        assert (comps[pivot, np.arange(comps.shape[1])] > 0).all()
    flipped = hosvd_modes(-centered, 3, 3)
    np.testing.assert_allclose(flipped.time_components,
                               result.time_components, atol=1e-10)
    np.testing.assert_allclose(flipped.age_components,
                               result.age_components, atol=1e-10)


def test_components_beyond_numerical_rank_are_dropped(caplog):
    u = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    v = np.array([1.0, -1.0, 2.0, 3.0, -2.0])
    tensor = np.einsum('t,x,i->txi', u, v, np.arange(1.0, 9.0))
    with caplog.at_level(logging.WARNING):
        result = hosvd_modes(tensor, 2, 3)
    assert 'numerical rank' in caplog.text
    assert result.time_components.shape == (6, 1)
    assert result.age_components.shape == (5, 1)


@pytest.mark.parametrize('Q, R', [(0, 1), (1, 0), (5, 1), (1, 4)])
def test_component_counts_are_bounded_by_dims(Q, R):
    with pytest.raises(ValidationError):
        hosvd_modes(np.ones((4, 3, 2)), Q, R)


def test_save_writes_three_tables(tmp_path, rng):
    centered, _ = center_fitted_array(rng.standard_normal((5, 4, 3)))
    result = hosvd_modes(centered, 2, 3)
    result.save(tmp_path, year_labels=range(2001, 2006),
                age_labels=['0', '1-4', '5-9', '10+'])
    time = pd.read_csv(tmp_path / 'factors_time.csv')
    age = pd.read_csv(tmp_path / 'factors_age.csv')
    explained = pd.read_csv(tmp_path / 'explained.csv')
    assert list(time.columns) == ['year', 'time_1', 'time_2']
    assert list(time['year']) == [2001, 2002, 2003, 2004, 2005]
    assert list(age.columns) == ['age', 'age_1', 'age_2', 'age_3']
    assert list(age['age']) == ['0', '1-4', '5-9', '10+']
    np.testing.assert_allclose(age[['age_1', 'age_2', 'age_3']].to_numpy(),
                               result.age_components)
    assert list(explained['mode']) == ['time'] * 2 + ['age'] * 3
