# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import numpy as np
import pytest

from rgnmr.errors import InvalidArgumentError
from rgnmr.gn_step import FactorPair, InnerSolveOptions
from rgnmr.simulation.generators import (
    gen_corruption,
    gen_low_rank,
    observe,
    sample_omega_fixed,
)
from rgnmr.simulation.instances import SimConfig, build_instance
from rgnmr.simulation.metrics import rel_rmse
from rgnmr.theory.geometry import in_b_mu, row_norm_bounds
from rgnmr.theory.modified import constrained_step, run_modified
from rgnmr.theory.params import TheoryParams
from rgnmr.theory.spectral import clip_rows, estimate_spectrum, spectral_init


@pytest.fixture(scope="module")
def clean_instance():
    model = gen_low_rank(60, 40, 2, 2.0, seed=8)
    pattern = sample_omega_fixed(60, 40, 2, 8.0, seed=8)

    return model, observe(model, pattern)


def squared_distance(z1, z2):
    return float(np.sum((z1.u - z2.u) ** 2) + np.sum((z1.v - z2.v) ** 2))


def loose_params(obs, r, init):
    params = TheoryParams(mu=1e6, alpha=0.0, delta=1e12, p=obs.sampling_rate)
    return params.with_spectrum(*estimate_spectrum(init))


def test_unconstrained_limit_recovers_clean_matrix(clean_instance):
    model, obs = clean_instance
    init = spectral_init(obs, 2, TheoryParams(mu=30.0, alpha=0.0, p=obs.sampling_rate))

    result = run_modified(obs, 2, loose_params(obs, 2, init), 30, init)

    assert rel_rmse(result.factors, model) <= 1e-6
    assert all(lam.cardinality == 0 for lam in result.lambda_history)


def test_vanishing_radius_freezes_the_iterate(clean_instance):
    _, obs = clean_instance
    init = spectral_init(obs, 2, TheoryParams(mu=30.0, alpha=0.0, p=obs.sampling_rate))
    params = TheoryParams(mu=1e6, alpha=0.0, delta=1e-20, p=obs.sampling_rate)
    params = params.with_spectrum(*estimate_spectrum(init))

    result = run_modified(obs, 2, params, 3, init)

    assert squared_distance(result.factors, init) <= 1e-20


def test_iterates_respect_constraints():
    model = gen_low_rank(60, 40, 2, 2.0, seed=9)
    pattern = sample_omega_fixed(60, 40, 2, 8.0, seed=9)
    corruption = gen_corruption(model, pattern, 0.05, seed=9)
    obs = observe(model, pattern, corruption)

    params = TheoryParams(mu=30.0, alpha=0.05, gamma=1.5, p=obs.sampling_rate)
    init = spectral_init(obs, 2, params)
    params = params.with_spectrum(*estimate_spectrum(init))
    sigma1 = params.sigma1_star
    eta1, eta2 = row_norm_bounds(60, 40, 2, params.mu, sigma1)
    start = FactorPair(u=clip_rows(init.u, eta1), v=clip_rows(init.v, eta2))

    result = run_modified(obs, 2, params, 8, init)

    assert in_b_mu(result.factors, params.mu, sigma1, rtol=1e-9)
    # the radii δ/4^(t+1) shrink geometrically, so the whole path stays within sqrt(δ)
    assert np.sqrt(squared_distance(result.factors, start)) <= np.sqrt(params.resolved_delta()) * (1 + 1e-6)
    assert result.iterations_used == 8


@pytest.mark.slow
def test_error_halves_every_iteration_with_explicit_delta():
    instance = build_instance(SimConfig(corruption_fraction=0.0, seed=0))
    obs = instance.observations
    params = TheoryParams(mu=max(obs.shape) / 5, alpha=0.0, delta=2.0, p=obs.sampling_rate)
    init = spectral_init(obs, 5, params)
    params = params.with_spectrum(*estimate_spectrum(init))
    errors = []

    def record_error(t, lin, lam):
        errors.append(rel_rmse(lin.dense(), instance.model))

    result = run_modified(obs, 5, params, 6, init, callback=record_error)

    decreasing = [(before, after) for before, after in zip(errors, errors[1:]) if before > 1e-10]

    assert len(errors) == 6
    assert len(decreasing) >= 2
    assert all(after <= before / 2 for before, after in decreasing)
    assert rel_rmse(result.factors, instance.model) <= 1e-8


def test_constrained_step_stays_in_ball(clean_instance):
    _, obs = clean_instance
    anchor = FactorPair(
        u=np.random.default_rng(0).standard_normal((60, 2)),
        v=np.random.default_rng(1).standard_normal((40, 2)),
    )

    for radius in (1e-4, 1e-1, 10.0):
        step, damp = constrained_step(anchor, obs, radius, InnerSolveOptions())

        assert squared_distance(step, FactorPair.zeros(60, 40, 2)) <= radius * (1 + 1e-9)
        assert damp >= 0


def test_requires_spectrum_estimates(clean_instance):
    _, obs = clean_instance
    params = TheoryParams(mu=30.0, alpha=0.0, p=obs.sampling_rate)

    with pytest.raises(InvalidArgumentError):
        run_modified(obs, 2, params, 5, FactorPair.zeros(60, 40, 2))


def test_rejects_bad_iteration_count_and_init(clean_instance):
    _, obs = clean_instance
    params = TheoryParams(mu=30.0, alpha=0.0, p=obs.sampling_rate).with_spectrum(1.0, 0.5)

    with pytest.raises(InvalidArgumentError):
        run_modified(obs, 2, params, 0, FactorPair.zeros(60, 40, 2))

    with pytest.raises(InvalidArgumentError):
        run_modified(obs, 2, params, 5, FactorPair.zeros(60, 40, 3))
