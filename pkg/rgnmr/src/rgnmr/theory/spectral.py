# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from typing import Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, svds

from rgnmr.errors import InvalidArgumentError, SolverConvergenceError
from rgnmr.gn_step import FactorPair, LinearizedEstimate, linearized, project_rank_r
from rgnmr.obs_model import ObservationSet, threshold_top_fraction
from rgnmr.theory.params import TheoryParams
from rgnmr.utils.linalg import balanced_from_svd, fix_svd_signs, truncated_svd

SVDS_MAX_ITERATIONS = 5000

MatrixSource = Union[np.ndarray, sparse.spmatrix, sparse.sparray, LinearizedEstimate, FactorPair]


def _sparse_svd(matrix: sparse.spmatrix, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        u, s, vt = svds(
            matrix.tocsr().astype(np.float64),
            k=r,
            maxiter=SVDS_MAX_ITERATIONS,
            random_state=0,
        )
    except ArpackNoConvergence as e:
        raise SolverConvergenceError(
            f"truncated SVD did not converge ({e})", iterations=SVDS_MAX_ITERATIONS
        ) from e

    order = np.argsort(s)[::-1]

    return u[:, order], s[order], vt[order]


def b_svd(source: MatrixSource, r: int) -> FactorPair:
    """Balanced rank-r factorization U = Ũ Σ^1/2, V = Ṽ Σ^1/2 of the best rank-r approximation.

    Dense arrays use a full SVD, sparse matrices a Lanczos truncated SVD, stacked representations the
    QR-core projection."""

    if r < 1:
        raise InvalidArgumentError("rank must be at least 1")

    if isinstance(source, FactorPair):
        source = linearized(source, source)

    if isinstance(source, LinearizedEstimate):
        return project_rank_r(source, r)

    if r > min(source.shape):
        raise InvalidArgumentError(
            f"rank {r} exceeds the smaller dimension of a {source.shape} matrix"
        )

    if sparse.issparse(source) and r < min(source.shape):
        u, s, vt = _sparse_svd(source, r)
        u, vt = fix_svd_signs(u, vt)
    else:
        dense = source.toarray() if sparse.issparse(source) else np.asarray(source, dtype=np.float64)
        u, s, vt = truncated_svd(dense, r)

    left, right = balanced_from_svd(u, s, vt)

    return FactorPair(u=left, v=right)


def clip_rows(matrix: np.ndarray, eta: float) -> np.ndarray:
    """Rescales every row with norm above eta to norm eta. Other rows are returned unchanged."""

    if eta < 0:
        raise InvalidArgumentError("eta must be nonnegative")

    clipped = np.array(matrix, dtype=np.float64, copy=True)
    norms = np.linalg.norm(clipped, axis=1)
    over = norms > eta

    clipped[over] *= (eta / norms[over])[:, None]

    return clipped


def top_singular_value(z: FactorPair) -> float:
    """σ1 of U Vᵀ for a balanced pair, read off the squared column norms."""

    return float(np.max(np.sum(z.u**2, axis=0)))


def estimate_spectrum(init: FactorPair) -> tuple[float, float]:
    """(σ1, σr) of the product U Vᵀ, used as constant-factor estimates of the true extremes."""

    _, r_u = np.linalg.qr(init.u, mode="reduced")
    _, r_v = np.linalg.qr(init.v, mode="reduced")
    sigma = np.linalg.svd(r_u @ r_v.T, compute_uv=False)

    sigma1 = float(sigma[0])
    sigmar = float(sigma[init.rank - 1]) if sigma.size >= init.rank else 0.0

    if sigmar <= np.finfo(np.float64).eps * sigma1 * max(init.shape):
        raise InvalidArgumentError("the initial estimate is rank deficient")

    return sigma1, sigmar


def spectral_init(obs: ObservationSet, r: int, params: TheoryParams) -> FactorPair:
    """Spectral initialization with outlier pre-removal and row clipping.

    The entries in the top α-fraction of both their row and column are zeroed, the rest is rescaled by 1/p,
    a balanced rank-r factorization is taken and the rows are clipped to
    sqrt(μ r / n) ‖Z‖_op with ‖Z‖_op = sqrt(2 σ1).

    Args:
    ----
        obs (ObservationSet): The observations.
        r (int): Target rank.
        params (TheoryParams): Uses mu, alpha and p.

    Returns:
    -------
        FactorPair: The clipped balanced initial factors.

    Raises:
    ------
        InvalidArgumentError: If p is not positive or r exceeds the matrix dims.
        SolverConvergenceError: If the truncated SVD does not converge."""

    if params.p <= 0:
        raise InvalidArgumentError("p must be positive")

    if r < 1 or r > min(obs.shape):
        raise InvalidArgumentError(f"rank {r} is not in [1, {min(obs.shape)}]")

    support = threshold_top_fraction(obs, obs.values, params.alpha)
    values = np.array(obs.values, copy=True)
    values[obs.mask_of(support)] = 0.0

    logging.info(f"Spectral init removed {support.cardinality} suspected outliers")

    centered = sparse.csr_matrix(
        (values / params.p, obs.cols, obs.row_ptr), shape=obs.shape
    )
    z = b_svd(centered, r)

    z_op = np.sqrt(2.0 * top_singular_value(z))
    eta1 = np.sqrt(params.mu * r / obs.n_rows) * z_op
    eta2 = np.sqrt(params.mu * r / obs.n_cols) * z_op

    return FactorPair(u=clip_rows(z.u, eta1), v=clip_rows(z.v, eta2))
