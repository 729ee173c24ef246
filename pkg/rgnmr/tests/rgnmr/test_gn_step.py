# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import numpy as np
import pytest
from pydantic import ValidationError

from rgnmr.errors import IllPosedProblemError, InvalidArgumentError
from rgnmr.gn_step import (
    FactorPair,
    InnerSolveOptions,
    LinearizedEstimate,
    apply_adjoint,
    apply_forward,
    linearized,
    project_rank_r,
    solve_damped,
    solve_min_norm,
)
from rgnmr.obs_model import ObservationSet


def random_factors(rng, n1, n2, r):
    return FactorPair(u=rng.standard_normal((n1, r)), v=rng.standard_normal((n2, r)))


def random_observations(rng, n_rows, n_cols, size):
    cells = rng.choice(n_rows * n_cols, size=size, replace=False)
    return ObservationSet.from_entries(
        n_rows, n_cols, cells // n_cols, cells % n_cols, rng.standard_normal(size)
    )


def dense_jacobian(anchor, obs):
    """Rows are observed entries, columns are vec(U) then vec(V), both row-major."""
    n1, n2, r = anchor.n_rows, anchor.n_cols, anchor.rank
    jacobian = np.zeros((obs.size, (n1 + n2) * r))

    for m, (i, j) in enumerate(zip(obs.rows, obs.cols)):
        jacobian[m, i * r : (i + 1) * r] = anchor.v[j]
        jacobian[m, n1 * r + j * r : n1 * r + (j + 1) * r] = anchor.u[i]

    return jacobian


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.fixture
def anchor_2x2():
    return FactorPair(u=[[1.0], [2.0]], v=[[3.0], [4.0]])


def test_forward_on_small_example(anchor_2x2):
    obs = ObservationSet.from_dense(np.zeros((2, 2)))
    z = FactorPair(u=[[1.0], [0.0]], v=[[0.0], [1.0]])

    assert apply_forward(anchor_2x2, z, obs).tolist() == [3.0, 5.0, 0.0, 2.0]


def test_adjoint_on_small_example(anchor_2x2):
    obs = ObservationSet.from_dense(np.zeros((2, 2)))

    adjoint = apply_adjoint(anchor_2x2, [1.0, 0.0, 0.0, 1.0], obs)

    assert adjoint.u.ravel().tolist() == [3.0, 4.0]
    assert adjoint.v.ravel().tolist() == [1.0, 2.0]


def test_forward_and_adjoint_are_adjoint(rng):
    for _ in range(20):
        anchor = random_factors(rng, 7, 5, 2)
        z = random_factors(rng, 7, 5, 2)
        obs = random_observations(rng, 7, 5, 18)
        w = rng.standard_normal(obs.size)

        left = np.dot(apply_forward(anchor, z, obs), w)
        adjoint = apply_adjoint(anchor, w, obs)
        right = np.sum(z.u * adjoint.u) + np.sum(z.v * adjoint.v)

        assert left == pytest.approx(right, rel=1e-10, abs=1e-10)


def test_forward_matches_dense_jacobian(rng):
    anchor = random_factors(rng, 6, 4, 2)
    z = random_factors(rng, 6, 4, 2)
    obs = random_observations(rng, 6, 4, 15)

    expected = dense_jacobian(anchor, obs) @ np.concatenate((z.u.ravel(), z.v.ravel()))

    assert np.allclose(apply_forward(anchor, z, obs), expected)


def test_forward_rejects_mismatched_dims(anchor_2x2):
    obs = ObservationSet.from_dense(np.zeros((3, 2)))

    with pytest.raises(InvalidArgumentError):
        apply_forward(anchor_2x2, anchor_2x2, obs)


@pytest.mark.parametrize("n1, n2, r, size", [(6, 5, 1, 20), (8, 6, 2, 30), (12, 10, 2, 70)])
def test_min_norm_solution_matches_pseudoinverse(rng, n1, n2, r, size):
    anchor = random_factors(rng, n1, n2, r)
    obs = random_observations(rng, n1, n2, size)
    rhs = rng.standard_normal(size)

    solution = solve_min_norm(anchor, obs, rhs)
    expected = np.linalg.pinv(dense_jacobian(anchor, obs)) @ rhs

    assert np.allclose(
        np.concatenate((solution.u.ravel(), solution.v.ravel())), expected, atol=1e-7
    )


def test_zero_rhs_gives_zero_step(rng):
    anchor = random_factors(rng, 4, 4, 2)
    obs = random_observations(rng, 4, 4, 10)

    solution = solve_min_norm(anchor, obs, np.zeros(10))

    assert solution.frobenius_norm() == 0.0


def test_solve_rejects_empty_and_non_finite(rng):
    anchor = random_factors(rng, 3, 3, 1)
    empty = ObservationSet.from_entries(3, 3, [], [], [])

    with pytest.raises(IllPosedProblemError):
        solve_min_norm(anchor, empty, [])

    obs = random_observations(rng, 3, 3, 4)
    with pytest.raises(InvalidArgumentError):
        solve_min_norm(anchor, obs, [1.0, np.nan, 0.0, 0.0])

    with pytest.raises(InvalidArgumentError):
        solve_min_norm(anchor, obs, [1.0, 2.0])


def test_exact_low_rank_is_a_fixed_point(rng):
    anchor = random_factors(rng, 8, 6, 2)
    truth = anchor.product()
    obs = ObservationSet.from_dense(truth)
    rhs = obs.values + anchor.values_at(obs.rows, obs.cols)

    step = solve_min_norm(anchor, obs, rhs)
    lin = linearized(anchor, step)

    assert np.allclose(lin.dense(), truth, atol=1e-9)
    assert np.allclose(project_rank_r(lin, 2).product(), truth, atol=1e-9)


def test_damped_solution_shrinks_with_damping(rng):
    anchor = random_factors(rng, 6, 6, 2)
    obs = random_observations(rng, 6, 6, 25)
    rhs = rng.standard_normal(25)

    norms = [
        solve_damped(anchor, obs, rhs, damp).frobenius_norm() for damp in (0.0, 1.0, 100.0)
    ]

    assert norms[0] >= norms[1] >= norms[2]
    assert norms[2] < 0.1 * norms[0]

    with pytest.raises(InvalidArgumentError):
        solve_damped(anchor, obs, rhs, -1.0)


def test_inner_iteration_limit():
    assert InnerSolveOptions().iteration_limit(30, 20) == 2500
    assert InnerSolveOptions(max_inner_iterations=7).iteration_limit(30, 20) == 7

    with pytest.raises(ValidationError):
        InnerSolveOptions(max_inner_iterations=0)


def test_linearized_of_equal_iterates_is_the_product(rng):
    z = random_factors(rng, 5, 4, 2)

    lin = linearized(z, z)

    assert lin.a.shape == (5, 4)
    assert lin.b.shape == (4, 4)
    assert np.allclose(lin.dense(), z.product())


def test_linearized_small_example():
    zt = FactorPair(u=[[1.0]], v=[[2.0]])
    zt1 = FactorPair(u=[[3.0]], v=[[5.0]])

    # 1 * 5 + 3 * 2 - 1 * 2
    assert linearized(zt, zt1).dense().tolist() == [[9.0]]


def test_project_rank_r_truncates_diagonal():
    lin = LinearizedEstimate(a=np.diag([4.0, 1.0]), b=np.eye(2))

    projected = project_rank_r(lin, 1)

    assert np.allclose(projected.product(), [[4.0, 0.0], [0.0, 0.0]])
    assert np.allclose(np.abs(projected.u.ravel()), [2.0, 0.0])


def test_project_rank_r_is_balanced_and_optimal(rng):
    lin = LinearizedEstimate(a=rng.standard_normal((9, 4)), b=rng.standard_normal((7, 4)))

    projected = project_rank_r(lin, 2)
    u, s, vt = np.linalg.svd(lin.dense())
    best = (u[:, :2] * s[:2]) @ vt[:2]

    assert np.allclose(projected.product(), best)
    assert np.allclose(projected.u.T @ projected.u, projected.v.T @ projected.v)


@pytest.mark.parametrize("r", [0, 5])
def test_project_rank_r_rejects_bad_rank(rng, r):
    lin = LinearizedEstimate(a=rng.standard_normal((4, 4)), b=rng.standard_normal((3, 4)))

    with pytest.raises(InvalidArgumentError):
        project_rank_r(lin, r)


def test_factor_pair_validation():
    with pytest.raises(ValidationError):
        FactorPair(u=np.ones((3, 2)), v=np.ones((3, 1)))

    with pytest.raises(ValidationError):
        FactorPair(u=[[np.inf]], v=[[1.0]])
