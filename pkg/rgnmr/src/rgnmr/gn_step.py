# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, lsqr

from rgnmr.errors import IllPosedProblemError, InvalidArgumentError
from rgnmr.obs_model import ObservationSet
from rgnmr.utils.linalg import balanced_from_svd, fix_svd_signs, truncated_svd


def _read_only_matrix(value: Any) -> np.ndarray:
    matrix = np.array(value, dtype=np.float64, copy=True)

    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D factor matrix, got shape {matrix.shape}")

    matrix.setflags(write=False)
    return matrix


def _row_dot(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", left, right)


class FactorPair(BaseModel):
    """A pair of factor matrices U (n1 x r) and V (n2 x r) representing U Vᵀ."""

    u: np.ndarray
    v: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("u", "v", mode="before")
    @classmethod
    def freeze(cls, value: Any) -> np.ndarray:
        return _read_only_matrix(value)

    @model_validator(mode="after")
    def check_factors(self) -> "FactorPair":
        if self.u.shape[1] != self.v.shape[1]:
            raise ValueError(
                f"factors have different inner dimensions {self.u.shape[1]} and {self.v.shape[1]}"
            )

        if self.u.shape[1] < 1:
            raise ValueError("factor inner dimension must be at least 1")

        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("factor entries must be finite")

        return self

    @classmethod
    def zeros(cls, n1: int, n2: int, r: int) -> "FactorPair":
        return cls(u=np.zeros((n1, r)), v=np.zeros((n2, r)))

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, n1: int) -> "FactorPair":
        return cls(u=stacked[:n1], v=stacked[n1:])

    @property
    def n_rows(self) -> int:
        return self.u.shape[0]

    @property
    def n_cols(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def product(self) -> np.ndarray:
        return self.u @ self.v.T

    def values_at(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return _row_dot(self.u[rows], self.v[cols])

    def stacked(self) -> np.ndarray:
        """The (n1 + n2) x r matrix [U; V]."""
        return np.vstack((self.u, self.v))

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.sum(self.u**2) + np.sum(self.v**2)))


class LinearizedEstimate(BaseModel):
    """A matrix kept in stacked form A Bᵀ, with A = [U_t | U_t+1 - U_t] and B = [V_t+1 | V_t]."""

    a: np.ndarray
    b: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("a", "b", mode="before")
    @classmethod
    def freeze(cls, value: Any) -> np.ndarray:
        return _read_only_matrix(value)

    @model_validator(mode="after")
    def check_blocks(self) -> "LinearizedEstimate":
        if self.a.shape[1] != self.b.shape[1]:
            raise ValueError("stacked blocks have different inner dimensions")

        return self

    @property
    def shape(self) -> tuple[int, int]:
        return (self.a.shape[0], self.b.shape[0])

    def values_at(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return _row_dot(self.a[rows], self.b[cols])

    def dense(self) -> np.ndarray:
        return self.a @ self.b.T


class InnerSolveOptions(BaseModel):
    """Settings of the Krylov least-squares solve. `max_inner_iterations=None` means 50 (n1 + n2)."""

    max_inner_iterations: Optional[int] = Field(default=None, gt=0)
    relative_tolerance: float = Field(default=1e-14, gt=0)
    seed: int = Field(default=0, ge=0)

    model_config = ConfigDict(extra="forbid", frozen=True)

    def iteration_limit(self, n1: int, n2: int) -> int:
        if self.max_inner_iterations is not None:
            return self.max_inner_iterations

        return 50 * (n1 + n2)


def _check_anchor(anchor: FactorPair, obs: ObservationSet) -> None:
    if anchor.shape != obs.shape:
        raise InvalidArgumentError(
            f"anchor dims {anchor.shape} do not match observation dims {obs.shape}"
        )


def _check_length(values: np.ndarray, obs: ObservationSet) -> None:
    if values.size != obs.size:
        raise InvalidArgumentError(
            f"expected {obs.size} values aligned with the observations, got {values.size}"
        )


def _scatter(obs: ObservationSet, residuals: np.ndarray) -> sparse.csr_matrix:
    """𝒫_Ω* of the residuals. Entries are row-major so the CSR structure is the entry order."""

    return sparse.csr_matrix(
        (residuals, obs.cols, obs.row_ptr), shape=obs.shape
    )


def apply_forward(
    anchor: FactorPair, z: FactorPair, obs: ObservationSet
) -> np.ndarray:
    """Evaluates z = (U, V) -> 𝒫_Ω(U_t Vᵀ + U V_tᵀ) on the observed entries.

    Args:
    ----
        anchor (FactorPair): The current iterate (U_t, V_t).
        z (FactorPair): The point (U, V) the linear map is applied to.
        obs (ObservationSet): The observed positions.

    Returns:
    -------
        np.ndarray: One value per observed entry, in entry order."""

    _check_anchor(anchor, obs)

    if z.u.shape != anchor.u.shape or z.v.shape != anchor.v.shape:
        raise InvalidArgumentError("z and anchor must have the same shapes")

    return _row_dot(anchor.u[obs.rows], z.v[obs.cols]) + _row_dot(
        z.u[obs.rows], anchor.v[obs.cols]
    )


def apply_adjoint(
    anchor: FactorPair, residuals: Any, obs: ObservationSet
) -> FactorPair:
    """Adjoint of `apply_forward`: (𝒫_Ω*(res) V_t, 𝒫_Ω*(res)ᵀ U_t)."""

    _check_anchor(anchor, obs)

    residuals = np.asarray(residuals, dtype=np.float64).reshape(-1)
    _check_length(residuals, obs)

    scattered = _scatter(obs, residuals)

    return FactorPair(u=scattered @ anchor.v, v=scattered.T @ anchor.u)


def gauss_newton_operator(anchor: FactorPair, obs: ObservationSet) -> LinearOperator:
    """The |Ω| x (n1 + n2) r operator of the Gauss-Newton subproblem over vec([U; V])."""

    _check_anchor(anchor, obs)

    n1, n2, r = anchor.n_rows, anchor.n_cols, anchor.rank
    u_rows = anchor.u[obs.rows]
    v_cols = anchor.v[obs.cols]

    def matvec(x: np.ndarray) -> np.ndarray:
        x = np.ravel(x)
        u = x[: n1 * r].reshape(n1, r)
        v = x[n1 * r :].reshape(n2, r)

        return _row_dot(u_rows, v[obs.cols]) + _row_dot(u[obs.rows], v_cols)

    def rmatvec(w: np.ndarray) -> np.ndarray:
        scattered = _scatter(obs, np.ravel(w))

        return np.concatenate(
            ((scattered @ anchor.v).ravel(), (scattered.T @ anchor.u).ravel())
        )

    return LinearOperator(
        shape=(obs.size, (n1 + n2) * r),
        matvec=matvec,
        rmatvec=rmatvec,
        dtype=np.float64,
    )


def _krylov_solve(
    anchor: FactorPair,
    obs: ObservationSet,
    rhs: Any,
    opts: InnerSolveOptions,
    damp: float,
) -> FactorPair:
    if obs.size == 0:
        raise IllPosedProblemError("the least-squares subproblem has no observed entries")

    _check_anchor(anchor, obs)

    rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
    _check_length(rhs, obs)

    if not np.all(np.isfinite(rhs)):
        raise InvalidArgumentError("right-hand side must be finite")

    n1, n2, r = anchor.n_rows, anchor.n_cols, anchor.rank

    if not np.any(rhs):
        return FactorPair.zeros(n1, n2, r)

    tolerance = opts.relative_tolerance
    solution, istop, itn = lsqr(
        gauss_newton_operator(anchor, obs),
        rhs,
        damp=damp,
        atol=tolerance,
        btol=tolerance,
        iter_lim=opts.iteration_limit(n1, n2),
    )[:3]

    logging.debug(f"LSQR finished after {itn} iterations with stop code {istop}")

    return FactorPair.from_stacked(solution.reshape(n1 + n2, r), n1)


def solve_min_norm(
    anchor: FactorPair,
    obs_minus_lambda: ObservationSet,
    rhs: Any,
    opts: Optional[InnerSolveOptions] = None,
) -> FactorPair:
    """Minimal-norm solution of min ‖apply_forward(anchor, z) - rhs‖ over z = (U, V).

    LSQR started from the zero vector stays in the row space of the operator, so it converges to the
    pseudoinverse solution even when the system is rank deficient.

    Args:
    ----
        anchor (FactorPair): The current iterate (U_t, V_t).
        obs_minus_lambda (ObservationSet): The observations on Ω minus Λ_t.
        rhs: X + U_t V_tᵀ on those observations, in entry order.
        opts (InnerSolveOptions, optional): Krylov settings.

    Returns:
    -------
        FactorPair: The new estimate (U_t+1, V_t+1).

    Raises:
    ------
        IllPosedProblemError: If there are no observations.
        InvalidArgumentError: If rhs is not finite or not aligned."""

    return _krylov_solve(
        anchor, obs_minus_lambda, rhs, opts or InnerSolveOptions(), damp=0.0
    )


def solve_damped(
    anchor: FactorPair,
    obs: ObservationSet,
    rhs: Any,
    damp: float,
    opts: Optional[InnerSolveOptions] = None,
) -> FactorPair:
    """Ridge form: min ‖apply_forward(anchor, d) - rhs‖² + damp² ‖d‖²."""

    if damp < 0:
        raise InvalidArgumentError("damp must be nonnegative")

    return _krylov_solve(anchor, obs, rhs, opts or InnerSolveOptions(), damp=damp)


def linearized(zt: FactorPair, zt1: FactorPair) -> LinearizedEstimate:
    """U_t V_t+1ᵀ + U_t+1 V_tᵀ - U_t V_tᵀ in stacked form."""

    if zt.u.shape != zt1.u.shape or zt.v.shape != zt1.v.shape:
        raise InvalidArgumentError("consecutive iterates must have the same shapes")

    return LinearizedEstimate(
        a=np.hstack((zt.u, zt1.u - zt.u)), b=np.hstack((zt1.v, zt.v))
    )


def project_rank_r(lin: LinearizedEstimate, r: int) -> FactorPair:
    """Best rank-r approximation of A Bᵀ as a balanced factor pair.

    Thin QR of both blocks, SVD of the small core, then U = Q_A Ũ Σ^1/2 and V = Q_B Ṽ Σ^1/2."""

    if r < 1:
        raise InvalidArgumentError("rank must be at least 1")

    if r > lin.a.shape[1]:
        raise InvalidArgumentError(
            f"rank {r} exceeds the stacked inner dimension {lin.a.shape[1]}"
        )

    q_a, r_a = np.linalg.qr(lin.a, mode="reduced")
    q_b, r_b = np.linalg.qr(lin.b, mode="reduced")

    core_u, sigma, core_vt = truncated_svd(r_a @ r_b.T, r)
    left, right_t = fix_svd_signs(q_a @ core_u, core_vt @ q_b.T)

    u, v = balanced_from_svd(left, sigma, right_t)

    return FactorPair(u=u, v=v)
