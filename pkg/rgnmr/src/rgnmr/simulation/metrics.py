# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from typing import Any, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from rgnmr.errors import InvalidArgumentError
from rgnmr.gn_step import FactorPair
from rgnmr.simulation.generators import LowRankModel

FAILURE_THRESHOLD = 1e-3
CONFIDENCE_Z = 1.96


def _dense(value: Any) -> np.ndarray:
    if isinstance(value, LowRankModel):
        return value.dense()

    if isinstance(value, FactorPair):
        return value.product()

    return np.asarray(value, dtype=np.float64)


def rel_rmse(l_hat: Any, model: Any) -> float:
    """‖L_hat - L*‖_F / ‖L*‖_F.

    Args:
    ----
        l_hat: The estimate, as a dense matrix or a factor pair.
        model: The ground truth, as a LowRankModel or a dense matrix.

    Returns:
    -------
        float: The relative error."""

    truth = _dense(model)
    estimate = _dense(l_hat)

    if estimate.shape != truth.shape:
        raise InvalidArgumentError(
            f"estimate shape {estimate.shape} does not match ground truth {truth.shape}"
        )

    scale = float(np.linalg.norm(truth))
    if scale == 0:
        raise InvalidArgumentError("ground truth is the zero matrix")

    return float(np.linalg.norm(estimate - truth)) / scale


def is_failure(value: float) -> bool:
    return value > FAILURE_THRESHOLD


class AggregateSummary(BaseModel):
    """Median error and failure probability of a group of trials."""

    n_trials: int = Field(..., gt=0)
    median_rel_rmse: float
    failure_rate: float = Field(..., ge=0, le=1)
    standard_error: float = Field(..., ge=0)
    lower: float
    upper: float


def summarize(rel_rmses: Sequence[float], failed: Sequence[bool]) -> AggregateSummary:
    if len(rel_rmses) == 0:
        raise InvalidArgumentError("cannot aggregate an empty set of trials")

    n = len(rel_rmses)
    rate = float(np.mean(np.asarray(failed, dtype=bool)))
    standard_error = float(np.sqrt(rate * (1 - rate) / n))

    return AggregateSummary(
        n_trials=n,
        median_rel_rmse=float(np.median(np.asarray(rel_rmses, dtype=np.float64))),
        failure_rate=rate,
        standard_error=standard_error,
        lower=rate - CONFIDENCE_Z * standard_error,
        upper=rate + CONFIDENCE_Z * standard_error,
    )


def aggregate(records: Sequence[Any]) -> AggregateSummary:
    """Median rel-RMSE and failure rate with its binomial standard error and ±1.96 SE band."""

    return summarize([rec.rel_rmse for rec in records], [rec.failed for rec in records])


def summarize_frame(frame: pd.DataFrame, by: str | list[str]) -> pd.DataFrame:
    """One AggregateSummary row per group of a records frame."""

    by = [by] if isinstance(by, str) else list(by)

    if frame.empty:
        raise InvalidArgumentError("cannot aggregate an empty set of trials")

    rows = []
    for key, group in frame.groupby(by, sort=True, dropna=False):
        key = key if isinstance(key, tuple) else (key,)
        summary = summarize(group["rel_rmse"].tolist(), group["failed"].tolist())
        rows.append({**dict(zip(by, key)), **summary.model_dump()})

    return pd.DataFrame(rows)
