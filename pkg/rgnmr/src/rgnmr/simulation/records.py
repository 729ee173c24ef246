# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, model_validator

from rgnmr.simulation.instances import SimConfig
from rgnmr.simulation.metrics import is_failure

RESULT_COLUMNS = [
    "rel_rmse",
    "failed",
    "runtime_seconds",
    "k_used",
    "k_hat",
    "status",
    "omega_attempts",
    "corruption_attempts",
]


class TrialRecord(BaseModel):
    """The outcome of one simulation trial."""

    config: SimConfig
    rel_rmse: float = Field(..., ge=0)
    failed: bool
    runtime_seconds: float = Field(default=0.0, ge=0)
    k_used: int = Field(..., ge=0)
    k_hat: Optional[int] = None
    status: str
    omega_attempts: int = Field(default=1, ge=1)
    corruption_attempts: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_failure_flag(self) -> "TrialRecord":
        if self.failed != is_failure(self.rel_rmse):
            raise ValueError(
                f"failed={self.failed} is inconsistent with rel_rmse={self.rel_rmse}"
            )

        return self

    def to_row(self) -> dict[str, Any]:
        """Flat row: config fields first, then the result columns."""

        row = self.config.model_dump(mode="json")
        row.update(self.model_dump(mode="json", exclude={"config"}))

        return row

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "TrialRecord":
        row = {key: (None if pd.isna(value) else value) for key, value in row.items()}
        config = {key: row.pop(key) for key in SimConfig.model_fields if key in row}

        return cls.model_validate({"config": config, **row})


def csv_columns() -> list[str]:
    return list(SimConfig.model_fields) + RESULT_COLUMNS


def records_to_frame(records: Sequence[TrialRecord]) -> pd.DataFrame:
    return pd.DataFrame([rec.to_row() for rec in records], columns=csv_columns())


def write_records_csv(records: Sequence[TrialRecord], path: str | Path) -> None:
    records_to_frame(records).to_csv(path, index=False)


def read_records_frame(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)


def read_records_csv(path: str | Path) -> list[TrialRecord]:
    frame = read_records_frame(path)

    return [TrialRecord.from_row(row) for row in frame.to_dict(orient="records")]
