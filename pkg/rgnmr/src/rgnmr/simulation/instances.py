# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from enum import StrEnum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from rgnmr.obs_model import ObservationSet
from rgnmr.simulation.generators import (
    Corruption,
    LowRankModel,
    SamplingPattern,
    floor_count,
    gen_corruption,
    gen_low_rank,
    observe,
    sample_omega_bernoulli,
    sample_omega_fixed,
    sample_omega_powerlaw,
)


class SamplingMode(StrEnum):
    FIXED_UNIFORM = "fixed-uniform"
    BERNOULLI = "bernoulli"
    POWER_LAW = "power-law"


class CorruptionMode(StrEnum):
    UNIFORM = "uniform"


class SimConfig(BaseModel):
    """One planted instance of the simulation protocol. Field order is the CSV column order."""

    n1: int = Field(default=200, gt=0)
    n2: int = Field(default=100, gt=0)
    r_true: int = Field(default=5, gt=0)
    rank_offset: int = Field(
        default=0, ge=0, description="Input rank minus true rank (overparameterization)."
    )
    kappa: float = Field(default=2.0, ge=1)
    oversampling_ratio: float = Field(default=12.0, gt=0)
    sampling_mode: SamplingMode = SamplingMode.FIXED_UNIFORM
    sampling_probability: Optional[float] = Field(
        default=None,
        gt=0,
        le=1,
        description="Bernoulli probability. None means the probability matching the oversampling ratio.",
    )
    powerlaw_exponent: float = Field(default=-2.0 / 3.0, le=0)
    clip_probabilities: bool = False
    corruption_fraction: float = Field(default=0.05, ge=0, le=0.5)
    corruption_mode: CorruptionMode = CorruptionMode.UNIFORM
    noise_sigma: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_feasible(self) -> "SimConfig":
        if self.r_true > min(self.n1, self.n2):
            raise ValueError("r_true cannot exceed min(n1, n2)")

        if self.input_rank > min(self.n1, self.n2):
            raise ValueError("r_true + rank_offset cannot exceed min(n1, n2)")

        if (
            self.sampling_mode == SamplingMode.FIXED_UNIFORM
            and self.target_size > self.n1 * self.n2
        ):
            raise ValueError(
                f"oversampling ratio {self.oversampling_ratio} asks for more than n1 * n2 entries"
            )

        return self

    @property
    def input_rank(self) -> int:
        return self.r_true + self.rank_offset

    @property
    def degrees_of_freedom(self) -> int:
        return self.r_true * (self.n1 + self.n2 - self.r_true)

    @property
    def target_size(self) -> int:
        return floor_count(self.oversampling_ratio * self.degrees_of_freedom)

    def bernoulli_probability(self) -> float:
        if self.sampling_probability is not None:
            return self.sampling_probability

        return min(1.0, self.oversampling_ratio * self.degrees_of_freedom / (self.n1 * self.n2))


class PlantedInstance(BaseModel):
    """A generated instance and everything needed to score a recovery on it."""

    config: SimConfig
    model: LowRankModel
    pattern: SamplingPattern
    corruption: Corruption
    observations: ObservationSet

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def k_star(self) -> int:
        return self.corruption.count


def sample_pattern(config: SimConfig, seed: int) -> SamplingPattern:
    match config.sampling_mode:
        case SamplingMode.FIXED_UNIFORM:
            return sample_omega_fixed(
                config.n1, config.n2, config.r_true, config.oversampling_ratio, seed
            )
        case SamplingMode.BERNOULLI:
            return sample_omega_bernoulli(
                config.n1, config.n2, config.bernoulli_probability(), seed
            )
        case SamplingMode.POWER_LAW:
            return sample_omega_powerlaw(
                config.n1,
                config.n2,
                config.r_true,
                config.oversampling_ratio,
                seed,
                exponent=config.powerlaw_exponent,
                clip_probabilities=config.clip_probabilities,
            )


def build_instance(config: SimConfig, seed: Optional[int] = None) -> PlantedInstance:
    """Generates L*, Ω, the corruption and the observations for one trial.

    The per-row check on Ω minus Λ* is only applied with fixed-size sampling, where Ω itself was verified."""

    seed = config.seed if seed is None else seed

    model = gen_low_rank(config.n1, config.n2, config.r_true, config.kappa, seed)
    pattern = sample_pattern(config, seed)
    corruption = gen_corruption(
        model,
        pattern,
        config.corruption_fraction,
        seed,
        min_line_count=(
            config.r_true if config.sampling_mode == SamplingMode.FIXED_UNIFORM else 0
        ),
    )
    observations = observe(model, pattern, corruption, config.noise_sigma, seed)

    logging.debug(
        f"Built instance with |Ω| = {pattern.size} and k* = {corruption.count} (seed {seed})"
    )

    return PlantedInstance(
        config=config,
        model=model,
        pattern=pattern,
        corruption=corruption,
        observations=observations,
    )
