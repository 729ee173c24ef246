# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import numpy as np
from scipy.linalg import orthogonal_procrustes

from rgnmr.errors import InvalidArgumentError
from rgnmr.gn_step import FactorPair


def procrustes_distance(z1: FactorPair, z2: FactorPair) -> float:
    """min over orthogonal P of ‖Z1 - Z2 P‖_F for the stacked pairs Z = [U; V]."""

    first = z1.stacked()
    second = z2.stacked()

    if first.shape != second.shape:
        raise InvalidArgumentError(
            f"stacked shapes differ: {first.shape} and {second.shape}"
        )

    rotation, _ = orthogonal_procrustes(second, first)

    return float(np.linalg.norm(first - second @ rotation))


def balance_gap(z: FactorPair) -> float:
    """‖UᵀU - VᵀV‖_F."""

    return float(np.linalg.norm(z.u.T @ z.u - z.v.T @ z.v))


def _singular_bases(source: FactorPair | np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source, FactorPair):
        q_u, r_u = np.linalg.qr(source.u, mode="reduced")
        q_v, r_v = np.linalg.qr(source.v, mode="reduced")
        left, _, right_t = np.linalg.svd(r_u @ r_v.T)

        return q_u @ left[:, :r], q_v @ right_t[:r].T

    left, _, right_t = np.linalg.svd(np.asarray(source, dtype=np.float64), full_matrices=False)

    return left[:, :r], right_t[:r].T


def incoherence_of(source: FactorPair | np.ndarray, r: int) -> float:
    """μ = max(n1/r max_i ‖U(i,·)‖², n2/r max_j ‖V(j,·)‖²) over the rank-r singular vectors.

    Args:
    ----
        source (FactorPair | np.ndarray): A dense matrix or a factor pair representing it.
        r (int): The rank.

    Returns:
    -------
        float: The incoherence, between 1 and max(n1, n2) / r."""

    if r < 1:
        raise InvalidArgumentError("rank must be at least 1")

    left, right = _singular_bases(source, r)
    n1, n2 = left.shape[0], right.shape[0]

    return float(
        max(
            n1 / r * np.max(np.sum(left**2, axis=1)),
            n2 / r * np.max(np.sum(right**2, axis=1)),
        )
    )


def row_norm_bounds(
    n1: int, n2: int, r: int, mu: float, sigma1_star: float
) -> tuple[float, float]:
    """Row-norm radii sqrt(3 μ r σ1* / n1) and sqrt(3 μ r σ1* / n2) of the incoherent factor set."""

    scale = 3.0 * mu * r * sigma1_star

    return float(np.sqrt(scale / n1)), float(np.sqrt(scale / n2))


def in_b_mu(
    z: FactorPair, mu: float, sigma1_star: float, rtol: float = 1e-12
) -> bool:
    """Membership in the set of factor pairs with bounded row norms."""

    eta1, eta2 = row_norm_bounds(z.n_rows, z.n_cols, z.rank, mu, sigma1_star)

    return bool(
        np.max(np.linalg.norm(z.u, axis=1)) <= eta1 * (1 + rtol)
        and np.max(np.linalg.norm(z.v, axis=1)) <= eta2 * (1 + rtol)
    )


def in_c_neighborhood(
    z: FactorPair,
    z_anchor: FactorPair,
    delta_t: float,
    rtol: float = 1e-12,
    atol: float = 0.0,
) -> bool:
    """‖U - U_t‖² + ‖V - V_t‖² ≤ δ_t.

    `atol` is an absolute slack on the distance itself, for differences of iterates that carry rounding
    error of order eps ‖Z‖."""

    if z.u.shape != z_anchor.u.shape or z.v.shape != z_anchor.v.shape:
        raise InvalidArgumentError("factor pairs have different shapes")

    squared = np.sum((z.u - z_anchor.u) ** 2) + np.sum((z.v - z_anchor.v) ** 2)

    return bool(np.sqrt(squared) <= np.sqrt(delta_t) * (1 + rtol) + atol)


def error_to(z: FactorPair, l_star: np.ndarray) -> float:
    """‖U Vᵀ - L*‖_F."""

    l_star = np.asarray(l_star, dtype=np.float64)

    if l_star.shape != z.shape:
        raise InvalidArgumentError(
            f"ground truth shape {l_star.shape} does not match factors {z.shape}"
        )

    return float(np.linalg.norm(z.product() - l_star))


def in_b_err(z: FactorPair, l_star: np.ndarray, eps: float, sigmar_star: float) -> bool:
    return error_to(z, l_star) <= eps * sigmar_star


def in_b_bln(z: FactorPair, delta: float, sigmar_star: float) -> bool:
    return balance_gap(z) <= delta * sigmar_star
