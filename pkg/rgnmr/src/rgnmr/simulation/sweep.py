# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import asyncio
import itertools
import logging
import time
from enum import StrEnum
from pathlib import Path
from typing import Any, Callable, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from rgnmr.errors import InvalidArgumentError
from rgnmr.ksearch import run_with_estimated_k
from rgnmr.simulation.instances import PlantedInstance, SimConfig, build_instance
from rgnmr.simulation.metrics import is_failure, rel_rmse
from rgnmr.simulation.records import TrialRecord
from rgnmr.solver import SolveOptions, SolveResult, run
from rgnmr.theory.modified import run_modified
from rgnmr.theory.params import TheoryParams
from rgnmr.theory.spectral import estimate_spectrum, spectral_init
from rgnmr.utils.environment import get_default_threads
from rgnmr.utils.seeding import derive_seed


class Variant(StrEnum):
    PLAIN = "plain"
    MODIFIED = "modified"


class TheorySettings(BaseModel):
    """Settings of the constrained variant inside a sweep. α is taken from the trial's corruption fraction."""

    mu: Optional[float] = Field(
        default=None, ge=1, description="None means max(n1, n2) / r."
    )
    gamma: float = Field(default=1.5, ge=1)
    delta: Optional[float] = Field(
        default=None,
        gt=0,
        description="None means sigma_r / (10 kappa), which caps the total movement at sqrt(delta) and "
        "usually stalls the run well before recovery. Set it explicitly for recovery sweeps.",
    )
    iterations: int = Field(default=50, ge=1)

    model_config = ConfigDict(extra="forbid")


class SweepConfig(BaseModel):
    """A Monte-Carlo sweep: base instance fields, a grid over instance fields and a number of repetitions.

    `base` holds only the fields it sets. Unset fields take the SimConfig defaults per grid point, so a base
    that is infeasible on its own is fine as long as every expanded point is feasible."""

    name: str = "sweep"
    base: dict[str, Any] = Field(default_factory=dict)
    grid: dict[str, list[Any]] = Field(default_factory=dict)
    repetitions: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    variant: Variant = Variant.PLAIN
    estimate_k: bool = False
    solver: SolveOptions = Field(default_factory=SolveOptions)
    theory: TheorySettings = Field(default_factory=TheorySettings)
    threads: Optional[int] = Field(default=None, ge=1)
    record_runtime: bool = True

    model_config = ConfigDict(extra="forbid")

    @field_validator("base", mode="before")
    @classmethod
    def check_base(cls, base: Any) -> dict[str, Any]:
        if isinstance(base, SimConfig):
            base = base.model_dump(exclude_unset=True)

        if not isinstance(base, dict):
            raise ValueError("base must be a mapping of instance fields")

        for field in base:
            if field not in SimConfig.model_fields or field == "seed":
                raise ValueError(f"unknown base field '{field}'")

        return base

    @field_validator("grid")
    @classmethod
    def check_grid(cls, grid: dict[str, list[Any]]) -> dict[str, list[Any]]:
        for axis, values in grid.items():
            if axis not in SimConfig.model_fields or axis == "seed":
                raise ValueError(f"unknown grid axis '{axis}'")

            if len(values) == 0:
                raise ValueError(f"grid axis '{axis}' has no values")

        return grid

    @property
    def axes(self) -> list[str]:
        """Grid axes in SimConfig field order, which fixes the expansion order."""

        return [field for field in SimConfig.model_fields if field in self.grid]

    def points(self) -> list[SimConfig]:
        """Grid points in expansion order. Raises ValidationError on the first infeasible point."""

        axes = self.axes

        return [
            SimConfig.model_validate({**self.base, **dict(zip(axes, values))})
            for values in itertools.product(*(self.grid[axis] for axis in axes))
        ]

    def trials(self) -> list[SimConfig]:
        """Every (grid point, repetition) pair with its derived seed, in trial order."""

        return [
            point.model_copy(update={"seed": derive_seed(self.seed, index, repetition)})
            for index, point in enumerate(self.points())
            for repetition in range(self.repetitions)
        ]

    @classmethod
    def from_yaml(cls, path: str | Path) -> "SweepConfig":
        with open(path, "r") as file:
            return cls.model_validate(yaml.safe_load(file))


TrialRunner = Callable[[SimConfig, SweepConfig], TrialRecord]


def _run_modified_trial(
    instance: PlantedInstance, r: int, sweep: SweepConfig
) -> SolveResult:
    obs = instance.observations
    settings = sweep.theory
    params = TheoryParams(
        mu=settings.mu or max(obs.shape) / r,
        alpha=instance.config.corruption_fraction,
        gamma=min(settings.gamma, 1.0 / max(instance.config.corruption_fraction, 1e-12)),
        delta=settings.delta,
        p=obs.sampling_rate,
    )
    init = spectral_init(obs, r, params)
    params = params.with_spectrum(*estimate_spectrum(init))

    return run_modified(obs, r, params, settings.iterations, init, sweep.solver.inner)


def run_trial(config: SimConfig, sweep: SweepConfig) -> TrialRecord:
    """Builds the instance for `config`, recovers it and scores the result."""

    instance = build_instance(config)
    r = config.input_rank
    opts = sweep.solver.model_copy(
        update={
            "k": instance.k_star,
            "noise_sigma": config.noise_sigma,
            "seed": config.seed,
        }
    )

    k_hat = None
    start = time.perf_counter()

    if sweep.variant == Variant.MODIFIED:
        result = _run_modified_trial(instance, r, sweep)
        k_used = result.lambda_final.cardinality
    elif sweep.estimate_k:
        trace, result = run_with_estimated_k(instance.observations, r, opts)
        k_hat = k_used = trace.k_hat
    else:
        result = run(instance.observations, r, opts)
        k_used = instance.k_star

    runtime = time.perf_counter() - start if sweep.record_runtime else 0.0
    error = rel_rmse(result.factors, instance.model)

    return TrialRecord(
        config=config,
        rel_rmse=error,
        failed=is_failure(error),
        runtime_seconds=runtime,
        k_used=k_used,
        k_hat=k_hat,
        status=str(result.status),
        omega_attempts=instance.pattern.attempts,
        corruption_attempts=instance.corruption.attempts,
    )


async def run_sweep_async(
    sweep: SweepConfig,
    threads: Optional[int] = None,
    trial_runner: TrialRunner = run_trial,
) -> list[TrialRecord]:
    """Runs every trial of the sweep, at most `threads` at a time.

    Results come back in trial order whatever the completion order."""

    threads = threads or sweep.threads or get_default_threads()
    if threads < 1:
        raise InvalidArgumentError("threads must be at least 1")

    trials = sweep.trials()
    semaphore = asyncio.Semaphore(threads)

    logging.info(
        f"Running sweep '{sweep.name}': {len(trials)} trials on {threads} threads"
    )

    async def bounded(config: SimConfig) -> TrialRecord:
        async with semaphore:
            return await asyncio.to_thread(trial_runner, config, sweep)

    return list(await asyncio.gather(*(bounded(config) for config in trials)))


def run_sweep(
    sweep: SweepConfig,
    threads: Optional[int] = None,
    trial_runner: TrialRunner = run_trial,
) -> list[TrialRecord]:
    return asyncio.run(run_sweep_async(sweep, threads, trial_runner))
