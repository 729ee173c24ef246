# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from functools import cached_property
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import sparse

from rgnmr.errors import InvalidArgumentError


def _read_only(array: Any, dtype: Any) -> np.ndarray:
    """Copies `array` into a 1-D read-only buffer of the given dtype."""

    out = np.array(array, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


class EntrySet(BaseModel):
    """A subset of observed positions, stored as sorted linear cell indices (row * n_cols + col).

    Sorted linear order equals lexicographic (row, col) order, so two sets with the same parent dims can be
    compared member by member."""

    n_rows: int = Field(..., gt=0)
    n_cols: int = Field(..., gt=0)
    members: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("members", mode="before")
    @classmethod
    def freeze_members(cls, value: Any) -> np.ndarray:
        return _read_only(value, np.int64)

    @model_validator(mode="after")
    def check_members(self) -> "EntrySet":
        if self.members.size == 0:
            return self

        if self.members[0] < 0 or self.members[-1] >= self.n_rows * self.n_cols:
            raise ValueError("entry set member out of bounds")

        if np.any(np.diff(self.members) <= 0):
            raise ValueError("entry set members must be strictly increasing")

        return self

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "EntrySet":
        return cls(n_rows=n_rows, n_cols=n_cols, members=np.empty(0, dtype=np.int64))

    @classmethod
    def from_cells(
        cls, n_rows: int, n_cols: int, rows: Any, cols: Any
    ) -> "EntrySet":
        """Builds the set from (row, col) pairs in any order. Repeated pairs collapse."""

        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)

        if rows.shape != cols.shape:
            raise InvalidArgumentError("rows and cols must have the same length")

        if rows.size and (
            rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols
        ):
            raise InvalidArgumentError("cell index out of bounds")

        return cls(
            n_rows=n_rows, n_cols=n_cols, members=np.unique(rows * n_cols + cols)
        )

    @property
    def parent_dims(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def cardinality(self) -> int:
        return int(self.members.size)

    @property
    def rows(self) -> np.ndarray:
        return self.members // self.n_cols

    @property
    def cols(self) -> np.ndarray:
        return self.members % self.n_cols

    def __len__(self) -> int:
        return self.cardinality


class ObservationSet(BaseModel):
    """The observed entries of a partially observed matrix.

    Entries are held in canonical row-major order (sorted by row, then column). Every value sequence in the
    package that is "aligned with the observations" follows this order."""

    n_rows: int = Field(..., gt=0)
    n_cols: int = Field(..., gt=0)
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("rows", "cols", mode="before")
    @classmethod
    def freeze_indices(cls, value: Any) -> np.ndarray:
        return _read_only(value, np.int64)

    @field_validator("values", mode="before")
    @classmethod
    def freeze_values(cls, value: Any) -> np.ndarray:
        return _read_only(value, np.float64)

    @model_validator(mode="after")
    def check_entries(self) -> "ObservationSet":
        if not (self.rows.size == self.cols.size == self.values.size):
            raise ValueError("rows, cols and values must have the same length")

        if self.rows.size == 0:
            return self

        if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
            raise ValueError("row index out of bounds")

        if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
            raise ValueError("column index out of bounds")

        if not np.all(np.isfinite(self.values)):
            raise ValueError("observed values must be finite")

        if np.any(np.diff(self.rows * self.n_cols + self.cols) <= 0):
            raise ValueError(
                "entries must be unique and in row-major order, use ObservationSet.from_entries"
            )

        return self

    @classmethod
    def from_entries(
        cls, n_rows: int, n_cols: int, rows: Any, cols: Any, values: Any
    ) -> "ObservationSet":
        """Builds an observation set from triplets in any order.

        Args:
        ----
            n_rows (int): Number of matrix rows.
            n_cols (int): Number of matrix columns.
            rows, cols: 0-based entry coordinates.
            values: Observed values.

        Returns:
        -------
            ObservationSet: The canonical observation set.

        Raises:
        ------
            InvalidArgumentError: On out-of-bounds indices, duplicated cells or non-finite values."""

        if n_rows <= 0 or n_cols <= 0:
            raise InvalidArgumentError("matrix dimensions must be positive")

        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=np.float64).reshape(-1)

        if not (rows.size == cols.size == values.size):
            raise InvalidArgumentError("rows, cols and values must have the same length")

        if rows.size and (
            rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols
        ):
            raise InvalidArgumentError("entry index out of bounds")

        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("observed values must be finite (NaN/inf rejected)")

        linear = rows * n_cols + cols
        order = np.argsort(linear, kind="stable")
        linear = linear[order]

        if np.any(np.diff(linear) == 0):
            raise InvalidArgumentError("duplicate (row, col) entry")

        return cls(
            n_rows=n_rows,
            n_cols=n_cols,
            rows=rows[order],
            cols=cols[order],
            values=values[order],
        )

    @classmethod
    def from_dense(
        cls, matrix: Any, mask: Optional[Any] = None
    ) -> "ObservationSet":
        """Observes `matrix` on the cells where `mask` is true (every cell when no mask is given)."""

        matrix = np.asarray(matrix, dtype=np.float64)

        if matrix.ndim != 2:
            raise InvalidArgumentError("expected a 2-D matrix")

        if mask is None:
            mask = np.ones(matrix.shape, dtype=bool)

        mask = np.asarray(mask, dtype=bool)
        if mask.shape != matrix.shape:
            raise InvalidArgumentError("mask shape does not match matrix shape")

        rows, cols = np.nonzero(mask)

        return cls(
            n_rows=matrix.shape[0],
            n_cols=matrix.shape[1],
            rows=rows,
            cols=cols,
            values=matrix[rows, cols],
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.size

    @cached_property
    def linear_index(self) -> np.ndarray:
        index = self.rows * self.n_cols + self.cols
        index.setflags(write=False)
        return index

    @cached_property
    def row_counts(self) -> np.ndarray:
        """r_i, the number of observed entries in each row."""
        return np.bincount(self.rows, minlength=self.n_rows)

    @cached_property
    def col_counts(self) -> np.ndarray:
        """c_j, the number of observed entries in each column."""
        return np.bincount(self.cols, minlength=self.n_cols)

    @cached_property
    def row_ptr(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.row_counts)))

    @cached_property
    def col_order(self) -> np.ndarray:
        """Entry positions sorted by (col, row)."""
        return np.lexsort((self.rows, self.cols))

    @cached_property
    def col_ptr(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.col_counts)))

    def row_index(self, i: int) -> np.ndarray:
        """Ordered entry positions of row i."""
        return np.arange(self.row_ptr[i], self.row_ptr[i + 1])

    def col_index(self, j: int) -> np.ndarray:
        """Ordered entry positions of column j."""
        return self.col_order[self.col_ptr[j] : self.col_ptr[j + 1]]

    @property
    def sampling_rate(self) -> float:
        """p̂ = |Ω| / (n1 n2)."""
        return self.size / (self.n_rows * self.n_cols)

    def has_empty_line(self, min_count: int = 1) -> bool:
        """True when some row or column holds fewer than `min_count` observed entries."""

        return bool(
            (self.row_counts < min_count).any() or (self.col_counts < min_count).any()
        )

    def positions_of(self, entries: EntrySet) -> np.ndarray:
        """Maps the members of `entries` to entry positions of this observation set.

        Raises:
        ------
            InvalidArgumentError: If the set has other parent dims or a member is not observed here."""

        if entries.parent_dims != self.shape:
            raise InvalidArgumentError(
                f"entry set dims {entries.parent_dims} do not match observation dims {self.shape}"
            )

        positions = np.searchsorted(self.linear_index, entries.members)

        if entries.cardinality and (
            positions[-1] >= self.size
            or not np.array_equal(self.linear_index[positions], entries.members)
        ):
            raise InvalidArgumentError("entry set references unobserved cells")

        return positions

    def mask_of(self, entries: EntrySet) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.positions_of(entries)] = True
        return mask

    def all_entries(self) -> EntrySet:
        return EntrySet(n_rows=self.n_rows, n_cols=self.n_cols, members=self.linear_index)

    def to_sparse(self) -> sparse.coo_matrix:
        """Zero-filled sparse matrix holding the observed values (𝒫_Ω of the data)."""

        return sparse.coo_matrix(
            (self.values, (self.rows, self.cols)), shape=self.shape
        )

    def with_values(self, values: Any) -> "ObservationSet":
        """Same positions, new aligned values."""

        return ObservationSet(
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            rows=self.rows,
            cols=self.cols,
            values=_aligned(self, values),
        )

    def equals(self, other: "ObservationSet") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )


def _aligned(obs: ObservationSet, values: Any) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).reshape(-1)

    if values.size != obs.size:
        raise InvalidArgumentError(
            f"expected {obs.size} values aligned with the observations, got {values.size}"
        )

    if np.isnan(values).any():
        raise InvalidArgumentError("NaN values are not allowed")

    return values


def values_on(obs: ObservationSet, evaluator: Any) -> np.ndarray:
    """Materializes a matrix on the observed positions, in entry order.

    Args:
    ----
        obs (ObservationSet): The observed positions.
        evaluator: A dense array, a scipy sparse matrix, an object exposing `values_at(rows, cols)` or a
            callable `f(rows, cols)`.

    Returns:
    -------
        np.ndarray: The values A(i_m, j_m)."""

    if isinstance(evaluator, np.ndarray):
        if evaluator.shape != obs.shape:
            raise InvalidArgumentError(
                f"matrix shape {evaluator.shape} does not match observation dims {obs.shape}"
            )
        return evaluator[obs.rows, obs.cols].astype(np.float64)

    if sparse.issparse(evaluator):
        return np.asarray(
            evaluator.tocsr()[obs.rows, obs.cols], dtype=np.float64
        ).reshape(-1)

    if hasattr(evaluator, "values_at"):
        return np.asarray(evaluator.values_at(obs.rows, obs.cols), dtype=np.float64)

    if callable(evaluator):
        return np.asarray(evaluator(obs.rows, obs.cols), dtype=np.float64).reshape(-1)

    raise InvalidArgumentError(f"cannot evaluate {type(evaluator).__name__} on entries")


def top_k_entries(obs: ObservationSet, residual_values: Any, k: int) -> EntrySet:
    """Positions of the k largest |residual_values|.

    Ties are broken by the smaller (row, col) position, which is the entry order."""

    values = _aligned(obs, residual_values)

    if k < 0 or k > obs.size:
        raise InvalidArgumentError(f"k must lie in [0, {obs.size}], got {k}")

    if k == 0:
        return EntrySet.empty(obs.n_rows, obs.n_cols)

    order = np.lexsort((np.arange(obs.size), -np.abs(values)))
    chosen = np.sort(order[:k])

    return EntrySet(
        n_rows=obs.n_rows, n_cols=obs.n_cols, members=obs.linear_index[chosen]
    )


def fraction_rank(theta: float, counts: np.ndarray) -> np.ndarray:
    """⌈θ·count⌉, with θ·count rounded to 9 decimals first so 0.3·10 is 3 and not 4."""

    return np.ceil(np.round(theta * np.asarray(counts), 9)).astype(np.int64)


def _line_thresholds(
    magnitudes: np.ndarray,
    lines: np.ndarray,
    counts: np.ndarray,
    theta: float,
) -> np.ndarray:
    ranks = fraction_rank(theta, counts)
    order = np.lexsort((-magnitudes, lines))
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))

    thresholds = np.full(counts.size, np.inf)
    ranked = ranks > 0
    thresholds[ranked] = magnitudes[order[starts[ranked] + ranks[ranked] - 1]]

    return thresholds


def threshold_top_fraction(obs: ObservationSet, values: Any, theta: float) -> EntrySet:
    """Support of the 𝒯_θ operator.

    An entry is kept iff its magnitude strictly exceeds both the ⌈θ·r_i⌉-th largest magnitude of its row and
    the ⌈θ·c_j⌉-th largest magnitude of its column. A zero rank means an infinite threshold.

    Raises:
    ------
        InvalidArgumentError: If theta is outside [0, 1]."""

    if not 0.0 <= theta <= 1.0:
        raise InvalidArgumentError(f"theta must lie in [0, 1], got {theta}")

    magnitudes = np.abs(_aligned(obs, values))

    row_thresholds = _line_thresholds(magnitudes, obs.rows, obs.row_counts, theta)
    col_thresholds = _line_thresholds(magnitudes, obs.cols, obs.col_counts, theta)

    keep = (magnitudes > row_thresholds[obs.rows]) & (
        magnitudes > col_thresholds[obs.cols]
    )

    return EntrySet(
        n_rows=obs.n_rows, n_cols=obs.n_cols, members=obs.linear_index[keep]
    )


def _subset(obs: ObservationSet, keep: np.ndarray) -> ObservationSet:
    return ObservationSet(
        n_rows=obs.n_rows,
        n_cols=obs.n_cols,
        rows=obs.rows[keep],
        cols=obs.cols[keep],
        values=obs.values[keep],
    )


def restrict(obs: ObservationSet, removed: EntrySet) -> ObservationSet:
    """The observations on Ω minus `removed`."""

    mask = obs.mask_of(removed)

    if removed.cardinality == 0:
        return obs

    return _subset(obs, ~mask)


def select(obs: ObservationSet, entries: EntrySet) -> ObservationSet:
    """The observations on `entries` only."""

    return _subset(obs, obs.mask_of(entries))


def merge(first: ObservationSet, second: ObservationSet) -> ObservationSet:
    """Union of two observation sets over disjoint positions."""

    if first.shape != second.shape:
        raise InvalidArgumentError("cannot merge observation sets with different dims")

    return ObservationSet.from_entries(
        first.n_rows,
        first.n_cols,
        np.concatenate((first.rows, second.rows)),
        np.concatenate((first.cols, second.cols)),
        np.concatenate((first.values, second.values)),
    )


def sets_equal(a: EntrySet, b: EntrySet) -> bool:
    if a.parent_dims != b.parent_dims:
        raise InvalidArgumentError("entry sets have different parent dims")

    return bool(np.array_equal(a.members, b.members))

