# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.io import mminfo, mmread, mmwrite

from rgnmr.errors import InvalidArgumentError
from rgnmr.obs_model import ObservationSet


def read_matrix_market(path: str | Path) -> ObservationSet:
    """Reads a `coordinate real general` MatrixMarket file into an observation set.

    Explicit zeros in the file are observations and are kept.

    Args:
    ----
        path (str | Path): The file to read.

    Returns:
    -------
        ObservationSet: The observations, 0-based.

    Raises:
    ------
        InvalidArgumentError: If the header is malformed or not `coordinate real general`.
        OSError: If the file cannot be opened."""

    path = Path(path)

    try:
        n_rows, n_cols, entries, fmt, field, symmetry = mminfo(str(path))
    except ValueError as e:
        raise InvalidArgumentError(f"{path}: malformed MatrixMarket header ({e})") from e

    if fmt != "coordinate" or field != "real" or symmetry != "general":
        raise InvalidArgumentError(
            f"{path}: expected 'coordinate real general', found '{fmt} {field} {symmetry}'"
        )

    try:
        matrix = sparse.coo_matrix(mmread(str(path)))
    except ValueError as e:
        raise InvalidArgumentError(f"{path}: malformed MatrixMarket body ({e})") from e

    logging.info(f"Read {entries} observed entries of a {n_rows}x{n_cols} matrix from {path}")

    return ObservationSet.from_entries(
        n_rows, n_cols, matrix.row, matrix.col, matrix.data
    )


def write_matrix_market(path: str | Path, obs: ObservationSet) -> None:
    """Writes the observations as a `coordinate real general` file (1-based on disk)."""

    mmwrite(
        str(path),
        obs.to_sparse(),
        field="real",
        precision=17,
        symmetry="general",
    )


def write_dense_matrix_market(path: str | Path, array: np.ndarray) -> None:
    """Writes a dense factor matrix as a MatrixMarket `array real general` file."""

    mmwrite(
        str(path),
        np.asarray(array, dtype=np.float64),
        field="real",
        precision=17,
        symmetry="general",
    )


def read_dense_matrix_market(path: str | Path) -> np.ndarray:
    """Reads a MatrixMarket array file into a dense matrix."""

    matrix = mmread(str(path))

    if sparse.issparse(matrix):
        return matrix.toarray()

    return np.asarray(matrix, dtype=np.float64)
