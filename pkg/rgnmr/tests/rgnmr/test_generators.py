# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import numpy as np
import pytest

from rgnmr.errors import InfeasibleSamplingError, InvalidArgumentError
from rgnmr.simulation.generators import (
    add_gaussian_noise,
    floor_count,
    gen_corruption,
    gen_low_rank,
    observe,
    powerlaw_probabilities,
    sample_omega_bernoulli,
    sample_omega_fixed,
    sample_omega_powerlaw,
    singular_value_profile,
)


@pytest.fixture(scope="module")
def planted():
    model = gen_low_rank(200, 100, 5, 2.0, seed=2024)
    pattern = sample_omega_fixed(200, 100, 5, 12.0, seed=2024)

    return model, pattern


@pytest.mark.parametrize(
    "r, kappa, expected",
    [(5, 2.0, [1.0, 0.875, 0.75, 0.625, 0.5]), (2, 4.0, [1.0, 0.25]), (1, 10.0, [1.0])],
)
def test_singular_value_profile(r, kappa, expected):
    assert singular_value_profile(r, kappa).tolist() == pytest.approx(expected)


def test_low_rank_model_has_planted_spectrum(planted):
    model, _ = planted

    assert np.allclose(np.linalg.svd(model.dense(), compute_uv=False)[:5], model.singular_values)
    assert np.allclose(model.left.T @ model.left, np.eye(5))
    assert np.allclose(model.factors.product(), model.dense())
    assert model.max_abs == pytest.approx(np.abs(model.dense()).max())


def test_low_rank_is_seeded():
    first = gen_low_rank(20, 10, 2, 2.0, seed=1)
    second = gen_low_rank(20, 10, 2, 2.0, seed=1)

    assert np.array_equal(first.dense(), second.dense())
    assert not np.array_equal(first.dense(), gen_low_rank(20, 10, 2, 2.0, seed=2).dense())


@pytest.mark.parametrize("r, kappa", [(0, 2.0), (11, 2.0), (2, 0.5)])
def test_low_rank_rejects_bad_arguments(r, kappa):
    with pytest.raises(InvalidArgumentError):
        gen_low_rank(20, 10, r, kappa, seed=0)


def test_fixed_sampling_size_and_line_counts(planted):
    _, pattern = planted

    assert pattern.size == 17700
    assert pattern.min_line_count() >= 5
    assert np.unique(pattern.linear_index).size == pattern.size


def test_floor_count_is_exact_for_decimal_products():
    assert floor_count(0.05 * 17700) == 885
    assert floor_count(12 * 5 * 295) == 17700
    assert floor_count(2.9999999) == 2


def test_fixed_sampling_pigeonhole_is_infeasible():
    with pytest.raises(InfeasibleSamplingError):
        sample_omega_fixed(10, 10, 2, 0.5, seed=0)


def test_fixed_sampling_rejects_oversized_target():
    with pytest.raises(InvalidArgumentError):
        sample_omega_fixed(10, 10, 2, 3.0, seed=0)


def test_corruption_count_and_support(planted):
    model, pattern = planted

    corruption = gen_corruption(model, pattern, 0.05, seed=2024)

    assert corruption.count == 885
    assert np.isin(corruption.support.members, pattern.linear_index).all()
    assert np.abs(corruption.values).max() <= model.max_abs

    kept = ~np.isin(pattern.linear_index, corruption.support.members)
    assert np.bincount(pattern.rows[kept], minlength=200).min() >= 5
    assert np.bincount(pattern.cols[kept], minlength=100).min() >= 5


def test_corruption_rejects_bad_fraction(planted):
    model, pattern = planted

    with pytest.raises(InvalidArgumentError):
        gen_corruption(model, pattern, 0.6, seed=0)


def test_observe_adds_corruption_on_support(planted):
    model, pattern = planted
    corruption = gen_corruption(model, pattern, 0.05, seed=7)

    obs = observe(model, pattern, corruption)
    clean = model.values_at(obs.rows, obs.cols)
    changed = np.flatnonzero(obs.values != clean)

    assert set(obs.linear_index[changed].tolist()) <= set(corruption.support.members.tolist())
    on_support = obs.mask_of(corruption.support)
    assert np.allclose(obs.values[on_support] - clean[on_support], corruption.values)


def test_bernoulli_sampling():
    pattern = sample_omega_bernoulli(200, 100, 0.3, seed=3)

    assert abs(pattern.size - 6000) <= 400
    assert sample_omega_bernoulli(5, 4, 1.0, seed=0).size == 20

    with pytest.raises(InvalidArgumentError):
        sample_omega_bernoulli(5, 4, 0.0, seed=0)


def test_powerlaw_probabilities():
    p, q, w = powerlaw_probabilities(200, 100, 5, 12.0)

    assert w == pytest.approx(12 * 5 * 295)
    assert p.sum() == pytest.approx(w)
    assert q.sum() == pytest.approx(w)
    assert p[0] / p[1] == pytest.approx(2 ** (2 / 3))
    assert q[1] / q[3] == pytest.approx(2 ** (2 / 3))


def test_powerlaw_flat_exponent_is_uniform():
    p, q, w = powerlaw_probabilities(50, 40, 2, 3.0, exponent=0.0)

    assert np.allclose(p, w / 50)
    assert np.allclose(q, w / 40)


def test_powerlaw_rejects_probabilities_above_one_unless_clipped():
    with pytest.raises(InvalidArgumentError):
        sample_omega_powerlaw(10, 10, 2, 2.0, seed=0)

    pattern = sample_omega_powerlaw(10, 10, 2, 2.0, seed=0, clip_probabilities=True)

    assert 0 in pattern.linear_index.tolist()


def test_gaussian_noise():
    values = np.zeros(10000)

    assert np.array_equal(add_gaussian_noise(values, 0.0, seed=0), values)

    noisy = add_gaussian_noise(values, 1e-3, seed=0)
    assert np.std(noisy) == pytest.approx(1e-3, rel=0.05)
    assert np.array_equal(noisy, add_gaussian_noise(values, 1e-3, seed=0))

    with pytest.raises(InvalidArgumentError):
        add_gaussian_noise(values, -1.0, seed=0)
