# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
import time
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from rgnmr.errors import InvalidArgumentError
from rgnmr.simulation.instances import SimConfig, build_instance
from rgnmr.solver import SolveOptions, run
from rgnmr.utils.seeding import derive_seed

TrialTimer = Callable[[int, int], float]


class BenchResult(BaseModel):
    """Runtime scaling of the solver on n x n instances."""

    sizes: list[int]
    runtimes: list[list[float]]
    median_runtimes: list[float]
    slope: float = Field(..., description="Least-squares slope of log(median runtime) on log(n).")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": self.sizes,
                "median_runtime_seconds": self.median_runtimes,
                "repetitions": [len(times) for times in self.runtimes],
            }
        )


def fit_loglog_slope(sizes: Sequence[float], times: Sequence[float]) -> float:
    """Slope of the least-squares line through (log n, log t)."""

    sizes = np.asarray(sizes, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)

    if sizes.size < 2 or sizes.size != times.size:
        raise InvalidArgumentError("need at least two (size, time) pairs")

    if np.any(sizes <= 0) or np.any(times <= 0):
        raise InvalidArgumentError("sizes and times must be positive")

    slope, _ = np.polyfit(np.log(sizes), np.log(times), 1)

    return float(slope)


def time_trial(
    n: int, repetition: int, r: int, rho: float, alpha: float, seed: int
) -> float:
    """Wall time of one solver run on a planted n x n instance, generation excluded."""

    config = SimConfig(
        n1=n,
        n2=n,
        r_true=r,
        oversampling_ratio=rho,
        corruption_fraction=alpha,
        seed=derive_seed(seed, n, repetition),
    )
    instance = build_instance(config)
    opts = SolveOptions(k=instance.k_star, seed=config.seed)

    start = time.perf_counter()
    run(instance.observations, r, opts)

    return time.perf_counter() - start


def run_bench(
    sizes: Sequence[int],
    r: int = 5,
    rho: float = 6.0,
    alpha: float = 0.05,
    repetitions: int = 3,
    seed: int = 0,
    trial_timer: Optional[TrialTimer] = None,
) -> BenchResult:
    """Median runtime per size and the fitted log-log slope.

    Args:
    ----
        sizes (Sequence[int]): At least three matrix sizes n.
        r, rho, alpha: Instance parameters.
        repetitions (int): Runs per size.
        seed (int): Base seed.
        trial_timer (TrialTimer, optional): Returns the runtime of (n, repetition). Defaults to timing real
            solver runs.

    Returns:
    -------
        BenchResult: The runtimes and the slope."""

    if len(sizes) < 3:
        raise InvalidArgumentError("the benchmark needs at least three sizes")

    if repetitions < 1:
        raise InvalidArgumentError("repetitions must be at least 1")

    timer = trial_timer or partial(time_trial, r=r, rho=rho, alpha=alpha, seed=seed)

    runtimes = []
    for n in sizes:
        times = [timer(n, repetition) for repetition in range(repetitions)]
        runtimes.append(times)
        logging.info(f"n={n}: median runtime {np.median(times):.3f}s")

    medians = [float(np.median(times)) for times in runtimes]

    return BenchResult(
        sizes=list(sizes),
        runtimes=runtimes,
        median_runtimes=medians,
        slope=fit_loglog_slope(sizes, medians),
    )
