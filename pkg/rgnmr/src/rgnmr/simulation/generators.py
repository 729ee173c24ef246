# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from functools import cached_property
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from tenacity import (
    RetryError,
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
)

from rgnmr.errors import InfeasibleSamplingError, InvalidArgumentError
from rgnmr.gn_step import FactorPair
from rgnmr.obs_model import EntrySet, ObservationSet
from rgnmr.utils.linalg import orthonormalize
from rgnmr.utils.seeding import RandomStream, rng_for

MAX_SAMPLING_ATTEMPTS = 100


class _VerificationFailed(Exception):
    """A drawn pattern left a row or column with too few entries."""


def floor_count(value: float) -> int:
    """⌊value⌋ after rounding to 9 decimals, so 0.05 * 17700 counts as 885."""

    return int(np.floor(np.round(value, 9)))


def _frozen(value: Any, dtype: Any) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class LowRankModel(BaseModel):
    """Planted ground truth L* = U Σ Vᵀ with orthonormal U, V."""

    n1: int = Field(..., gt=0)
    n2: int = Field(..., gt=0)
    r: int = Field(..., gt=0)
    kappa: float = Field(..., ge=1)
    singular_values: np.ndarray
    left: np.ndarray
    right: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("singular_values", "left", "right", mode="before")
    @classmethod
    def freeze(cls, value: Any) -> np.ndarray:
        return _frozen(value, np.float64)

    @model_validator(mode="after")
    def check_shapes(self) -> "LowRankModel":
        if self.left.shape != (self.n1, self.r) or self.right.shape != (self.n2, self.r):
            raise ValueError("basis shapes do not match (n1, r) and (n2, r)")

        if self.singular_values.shape != (self.r,):
            raise ValueError("expected r singular values")

        return self

    @property
    def factors(self) -> FactorPair:
        """Balanced factors (U Σ^1/2, V Σ^1/2)."""

        root = np.sqrt(self.singular_values)
        return FactorPair(u=self.left * root, v=self.right * root)

    def dense(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T

    def values_at(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return np.einsum(
            "ij,ij->i", self.left[rows] * self.singular_values, self.right[cols]
        )

    @cached_property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.dense())))

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.singular_values))


class SamplingPattern(BaseModel):
    """Observed positions without values, in row-major order, and the number of draws it took."""

    n_rows: int = Field(..., gt=0)
    n_cols: int = Field(..., gt=0)
    rows: np.ndarray
    cols: np.ndarray
    attempts: int = Field(default=1, ge=1)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("rows", "cols", mode="before")
    @classmethod
    def freeze(cls, value: Any) -> np.ndarray:
        return _frozen(value, np.int64)

    @classmethod
    def from_linear(cls, n_rows: int, n_cols: int, cells: np.ndarray, attempts: int = 1) -> "SamplingPattern":
        cells = np.sort(cells)
        return cls(
            n_rows=n_rows,
            n_cols=n_cols,
            rows=cells // n_cols,
            cols=cells % n_cols,
            attempts=attempts,
        )

    @property
    def size(self) -> int:
        return int(self.rows.size)

    @property
    def linear_index(self) -> np.ndarray:
        return self.rows * self.n_cols + self.cols

    @property
    def row_counts(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_rows)

    @property
    def col_counts(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n_cols)

    def min_line_count(self) -> int:
        if self.size == 0:
            return 0

        return int(min(self.row_counts.min(), self.col_counts.min()))

    def with_values(self, values: np.ndarray) -> ObservationSet:
        return ObservationSet(
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            rows=self.rows,
            cols=self.cols,
            values=values,
        )


class Corruption(BaseModel):
    """Planted outliers: the support Λ* and the values S* on it, aligned with the sorted support."""

    support: EntrySet
    values: np.ndarray
    attempts: int = Field(default=1, ge=1)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("values", mode="before")
    @classmethod
    def freeze(cls, value: Any) -> np.ndarray:
        return _frozen(value, np.float64)

    @model_validator(mode="after")
    def check_alignment(self) -> "Corruption":
        if self.values.size != self.support.cardinality:
            raise ValueError("one corruption value per support member is required")

        return self

    @property
    def count(self) -> int:
        return self.support.cardinality


def singular_value_profile(r: int, kappa: float) -> np.ndarray:
    """r values evenly spaced from 1 down to 1/κ."""

    return np.linspace(1.0, 1.0 / kappa, r)


def gen_low_rank(n1: int, n2: int, r: int, kappa: float, seed: int) -> LowRankModel:
    """Planted rank-r matrix with orthonormalized Gaussian factors and condition number κ.

    Args:
    ----
        n1, n2 (int): Matrix dims.
        r (int): Rank.
        kappa (float): Condition number, at least 1.
        seed (int): Base seed.

    Returns:
    -------
        LowRankModel: The ground truth."""

    if r < 1 or r > min(n1, n2):
        raise InvalidArgumentError(f"rank {r} is not in [1, min({n1}, {n2})]")

    if kappa < 1:
        raise InvalidArgumentError(f"kappa must be at least 1, got {kappa}")

    rng = rng_for(seed, RandomStream.LOW_RANK)
    left = orthonormalize(rng.standard_normal((n1, r)))
    right = orthonormalize(rng.standard_normal((n2, r)))

    return LowRankModel(
        n1=n1,
        n2=n2,
        r=r,
        kappa=kappa,
        singular_values=singular_value_profile(r, kappa),
        left=left,
        right=right,
    )


def _with_retries(draw: Callable[[], Any], what: str) -> tuple[Any, int]:
    """Runs `draw` until it passes verification, at most MAX_SAMPLING_ATTEMPTS times."""

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(MAX_SAMPLING_ATTEMPTS),
            retry=retry_if_exception_type(_VerificationFailed),
            before_sleep=before_sleep_log(logging.getLogger(__name__), logging.DEBUG),
        ):
            with attempt:
                result = draw()
    except RetryError as e:
        raise InfeasibleSamplingError(
            f"{what} failed verification {MAX_SAMPLING_ATTEMPTS} times"
        ) from e

    attempts = attempt.retry_state.attempt_number
    if attempts > 1:
        logging.warning(f"{what} needed {attempts} attempts")

    return result, attempts


def sample_omega_fixed(n1: int, n2: int, r: int, rho: float, seed: int) -> SamplingPattern:
    """⌊ρ r (n1 + n2 - r)⌋ cells drawn without replacement, redrawn until every row and column has r."""

    target = floor_count(rho * r * (n1 + n2 - r))

    if target > n1 * n2:
        raise InvalidArgumentError(
            f"target |Ω| = {target} exceeds the {n1 * n2} cells of the matrix"
        )

    if target < r * max(n1, n2):
        raise InfeasibleSamplingError(
            f"|Ω| = {target} cannot place {r} entries in each of {max(n1, n2)} lines"
        )

    rng = rng_for(seed, RandomStream.OMEGA)

    def draw() -> SamplingPattern:
        cells = rng.choice(n1 * n2, size=target, replace=False)
        pattern = SamplingPattern.from_linear(n1, n2, cells)

        if pattern.min_line_count() < r:
            raise _VerificationFailed()

        return pattern

    pattern, attempts = _with_retries(draw, "Fixed-size sampling")

    return pattern.model_copy(update={"attempts": attempts})


def sample_omega_bernoulli(n1: int, n2: int, p: float, seed: int) -> SamplingPattern:
    """Every cell observed independently with probability p."""

    if not 0 < p <= 1:
        raise InvalidArgumentError(f"p must lie in (0, 1], got {p}")

    rng = rng_for(seed, RandomStream.OMEGA)
    cells = np.flatnonzero(rng.random((n1, n2)) < p)

    return SamplingPattern.from_linear(n1, n2, cells)


def power_law_weights(n: int, exponent: float) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.float64) ** exponent


def powerlaw_probabilities(
    n1: int, n2: int, r: int, rho: float, exponent: float = -2.0 / 3.0
) -> tuple[np.ndarray, np.ndarray, float]:
    """Row and column weights p, q normalized to sum to w = ρ r (n1 + n2 - r), and w itself.

    Cell (i, j) is observed with probability p_i q_j / w."""

    w = rho * r * (n1 + n2 - r)
    p = power_law_weights(n1, exponent)
    q = power_law_weights(n2, exponent)

    return p * (w / p.sum()), q * (w / q.sum()), w


def sample_omega_powerlaw(
    n1: int,
    n2: int,
    r: int,
    rho: float,
    seed: int,
    exponent: float = -2.0 / 3.0,
    clip_probabilities: bool = False,
) -> SamplingPattern:
    """Non-uniform sampling with power-law row and column weights.

    Raises:
    ------
        InvalidArgumentError: If some cell probability exceeds 1 and clipping is off."""

    p, q, w = powerlaw_probabilities(n1, n2, r, rho, exponent)
    probabilities = np.outer(p, q) / w

    if probabilities.max() > 1:
        if not clip_probabilities:
            raise InvalidArgumentError(
                f"power-law cell probability {probabilities.max():.3f} exceeds 1, "
                "lower rho or enable clip_probabilities"
            )

        probabilities = np.minimum(probabilities, 1.0)

    rng = rng_for(seed, RandomStream.OMEGA)
    cells = np.flatnonzero(rng.random((n1, n2)) < probabilities)

    return SamplingPattern.from_linear(n1, n2, cells)


def gen_corruption(
    model: LowRankModel,
    pattern: SamplingPattern,
    alpha: float,
    seed: int,
    min_line_count: Optional[int] = None,
) -> Corruption:
    """⌊α |Ω|⌋ observed cells corrupted with values uniform in [-max|L*|, max|L*|].

    The support is redrawn until Ω minus Λ* keeps `min_line_count` entries (default r) in every row and
    column. Pass 0 to skip the check."""

    if not 0 <= alpha <= 0.5:
        raise InvalidArgumentError(f"alpha must lie in [0, 0.5], got {alpha}")

    required = model.r if min_line_count is None else min_line_count
    count = floor_count(alpha * pattern.size)
    linear = pattern.linear_index

    support_rng = rng_for(seed, RandomStream.CORRUPTION_SUPPORT)

    def draw() -> np.ndarray:
        chosen = np.sort(support_rng.choice(pattern.size, size=count, replace=False))
        kept = np.ones(pattern.size, dtype=bool)
        kept[chosen] = False

        if required > 0 and (
            np.bincount(pattern.rows[kept], minlength=pattern.n_rows).min() < required
            or np.bincount(pattern.cols[kept], minlength=pattern.n_cols).min() < required
        ):
            raise _VerificationFailed()

        return chosen

    chosen, attempts = _with_retries(draw, "Corruption sampling")

    magnitude = model.max_abs
    values = rng_for(seed, RandomStream.CORRUPTION_VALUES).uniform(
        -magnitude, magnitude, size=count
    )

    return Corruption(
        support=EntrySet(
            n_rows=pattern.n_rows, n_cols=pattern.n_cols, members=linear[chosen]
        ),
        values=values,
        attempts=attempts,
    )


def add_gaussian_noise(values: Any, sigma: float, seed: int) -> np.ndarray:
    """values + i.i.d. N(0, σ²)."""

    if sigma < 0:
        raise InvalidArgumentError("sigma must be nonnegative")

    values = np.array(values, dtype=np.float64, copy=True)

    if sigma == 0:
        return values

    noise = rng_for(seed, RandomStream.NOISE).standard_normal(values.size)

    return values + sigma * noise.reshape(values.shape)


def observe(
    model: LowRankModel,
    pattern: SamplingPattern,
    corruption: Optional[Corruption] = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> ObservationSet:
    """𝒫_Ω(L* + S*), plus Gaussian noise when noise_sigma > 0."""

    values = model.values_at(pattern.rows, pattern.cols)

    if corruption is not None and corruption.count:
        positions = np.searchsorted(pattern.linear_index, corruption.support.members)
        values[positions] += corruption.values

    values = add_gaussian_noise(values, noise_sigma, seed)

    return pattern.with_values(values)
