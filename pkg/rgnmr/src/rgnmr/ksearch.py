# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from typing import Callable, Optional

from pydantic import BaseModel, Field, model_validator

from rgnmr.errors import InvalidArgumentError
from rgnmr.obs_model import ObservationSet
from rgnmr.solver import SolveOptions, SolveResult, SolveStatus, run

PROBE_ITERATIONS = 60


class KProbe(BaseModel):
    """One bisection probe: a solver run at a fixed k."""

    k_tested: int = Field(..., ge=0)
    stabilized: bool
    iterations: int = Field(..., ge=0)


class KSearchTrace(BaseModel):
    """The probes of a corruption-count search and the resulting upper bound."""

    probes: list[KProbe] = Field(default_factory=list)
    k_hat: int
    k_min: int
    k_max: int
    warning: bool = Field(
        default=False, description="Set when probes ran and none of them stabilized."
    )

    @model_validator(mode="after")
    def check_bounds(self) -> "KSearchTrace":
        if not self.k_min <= self.k_hat <= self.k_max:
            raise ValueError(
                f"k_hat = {self.k_hat} lies outside [{self.k_min}, {self.k_max}]"
            )

        return self


ProbeFunction = Callable[[int], KProbe]


def probe_options(opts: SolveOptions, k: int) -> SolveOptions:
    """Options for one probe.

    Probes run a fixed number of iterations with a fixed seed. Without noise every iteration runs, so the
    tail of the Λ trajectory is observed at machine precision; with noise the square-root stopping rule
    stays active."""

    return opts.model_copy(
        update={
            "k": k,
            "max_outer_iterations": PROBE_ITERATIONS,
            "early_stop": opts.noise_sigma > 0,
        }
    )


def probe_k(obs: ObservationSet, r: int, k: int, opts: SolveOptions) -> KProbe:
    result = run(obs, r, probe_options(opts, k))
    stabilized = result.lambda_stabilized and result.status != SolveStatus.ILL_POSED

    logging.info(f"Probe k={k}: Λ stabilized: {stabilized}")

    return KProbe(
        k_tested=k, stabilized=stabilized, iterations=result.iterations_used
    )


def estimate_k_upper_bound(
    obs: ObservationSet,
    r: int,
    k_min: int = 0,
    k_max: Optional[int] = None,
    opts: Optional[SolveOptions] = None,
    probe: Optional[ProbeFunction] = None,
) -> KSearchTrace:
    """Bisection for an upper bound on the number of corrupted entries.

    A k whose Λ trajectory stabilizes raises k_min to k, otherwise k_max drops to k. The search ends when
    the interval has width one and returns the final k_min, or the final k_max when no probe stabilized.

    Args:
    ----
        obs (ObservationSet): The observations.
        r (int): Target rank.
        k_min (int): Lower end of the search interval.
        k_max (int, optional): Upper end. Defaults to half of the observed entries.
        opts (SolveOptions, optional): Base solver options for the probes.
        probe (ProbeFunction, optional): Replaces the solver probe, mainly for testing.

    Returns:
    -------
        KSearchTrace: The probes and k_hat."""

    opts = opts or SolveOptions()

    if k_max is None:
        k_max = obs.size // 2

    if k_min < 0 or k_min > k_max or k_max > obs.size:
        raise InvalidArgumentError(
            f"need 0 <= k_min <= k_max <= {obs.size}, got [{k_min}, {k_max}]"
        )

    if probe is None:

        def probe(k: int) -> KProbe:
            return probe_k(obs, r, k, opts)

    low, high = k_min, k_max
    probes: list[KProbe] = []

    while high - low > 1:
        k = (low + high) // 2
        result = probe(k)
        probes.append(result)

        if result.stabilized:
            low = k
        else:
            high = k

    warning = bool(probes) and not any(p.stabilized for p in probes)

    if warning:
        logging.warning(
            f"No probe stabilized in [{k_min}, {k_max}], returning the conservative bound {high}"
        )

    k_hat = high if warning else low

    return KSearchTrace(
        probes=probes, k_hat=k_hat, k_min=k_min, k_max=k_max, warning=warning
    )


def run_with_estimated_k(
    obs: ObservationSet,
    r: int,
    opts: Optional[SolveOptions] = None,
    k_min: int = 0,
    k_max: Optional[int] = None,
) -> tuple[KSearchTrace, SolveResult]:
    """Bounds the corruption count by bisection, then runs the solver at k = k_hat."""

    opts = opts or SolveOptions()
    trace = estimate_k_upper_bound(obs, r, k_min, k_max, opts)

    logging.info(f"Estimated k_hat = {trace.k_hat} after {len(trace.probes)} probes")

    return trace, run(obs, r, opts.model_copy(update={"k": trace.k_hat}))
