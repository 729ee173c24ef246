# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import numpy as np


def column_signs(matrix: np.ndarray) -> np.ndarray:
    """Sign of the leading nonzero entry of every column (+1 for all-zero columns)."""

    nonzero = matrix != 0
    leading = np.argmax(nonzero, axis=0)
    signs = np.sign(matrix[leading, np.arange(matrix.shape[1])])
    signs[signs == 0] = 1.0

    return signs


def fix_svd_signs(
    left: np.ndarray, right_t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flips singular vector pairs so the leading nonzero entry of each left vector is nonnegative."""

    signs = column_signs(left)

    return left * signs, right_t * signs[:, None]


def orthonormalize(matrix: np.ndarray) -> np.ndarray:
    """Thin QR orthonormalization with the leading-entry sign convention applied to Q."""

    q, _ = np.linalg.qr(matrix, mode="reduced")

    return q * column_signs(q)


def truncated_svd(
    matrix: np.ndarray, rank: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense thin SVD truncated to `rank` components, zero padded when the matrix is smaller."""

    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    u, vt = fix_svd_signs(u, vt)

    available = s.shape[0]
    if rank > available:
        u = np.hstack([u, np.zeros((u.shape[0], rank - available))])
        vt = np.vstack([vt, np.zeros((rank - available, vt.shape[1]))])
        s = np.concatenate([s, np.zeros(rank - available)])

    return u[:, :rank], s[:rank], vt[:rank]


def balanced_from_svd(
    u: np.ndarray, s: np.ndarray, vt: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Splits U diag(s) Vt evenly into (U diag(s)^1/2, V diag(s)^1/2)."""

    root = np.sqrt(np.clip(s, 0.0, None))

    return u * root, vt.T * root
