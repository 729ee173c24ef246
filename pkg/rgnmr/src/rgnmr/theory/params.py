# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from rgnmr.errors import InvalidArgumentError


class TheoryParams(BaseModel):
    """Parameters of the constrained variant and of the spectral initialization."""

    mu: float = Field(..., ge=1, description="Incoherence parameter.")
    alpha: float = Field(
        ..., ge=0, lt=1, description="Bound on the corrupted fraction of any row or column."
    )
    gamma: float = Field(default=1.0, ge=1, description="Over-removal factor.")
    delta: Optional[float] = Field(
        default=None,
        gt=0,
        description="Neighborhood budget. None means sigmar_star / (10 kappa).",
    )
    p: float = Field(..., gt=0, le=1, description="Observation probability.")
    sigma1_star: Optional[float] = Field(default=None, gt=0)
    sigmar_star: Optional[float] = Field(default=None, gt=0)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_consistency(self) -> "TheoryParams":
        if self.gamma * self.alpha > 1:
            raise ValueError(
                f"gamma * alpha must not exceed 1, got {self.gamma * self.alpha}"
            )

        if (
            self.sigma1_star is not None
            and self.sigmar_star is not None
            and self.sigma1_star < self.sigmar_star
        ):
            raise ValueError("sigma1_star must be at least sigmar_star")

        return self

    @computed_field
    @property
    def theta(self) -> float:
        """The fraction γα passed to the thresholding operator."""
        return self.gamma * self.alpha

    @property
    def has_spectrum(self) -> bool:
        return self.sigma1_star is not None and self.sigmar_star is not None

    def require_spectrum(self) -> tuple[float, float]:
        if not self.has_spectrum:
            raise InvalidArgumentError(
                "sigma1_star and sigmar_star are required, estimate them with estimate_spectrum"
            )

        return self.sigma1_star, self.sigmar_star

    def default_delta(self) -> float:
        sigma1, sigmar = self.require_spectrum()
        kappa = sigma1 / sigmar

        return sigmar / (10.0 * kappa)

    def resolved_delta(self) -> float:
        return self.delta if self.delta is not None else self.default_delta()

    def with_spectrum(self, sigma1: float, sigmar: float) -> "TheoryParams":
        """Copy with the singular-value estimates filled in where they are missing."""

        return TheoryParams.model_validate(
            {
                **self.model_dump(exclude={"theta"}),
                "sigma1_star": self.sigma1_star or sigma1,
                "sigmar_star": self.sigmar_star or sigmar,
            }
        )
