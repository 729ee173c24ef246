# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from enum import StrEnum
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from rgnmr.errors import IllPosedProblemError, InvalidArgumentError
from rgnmr.gn_step import (
    FactorPair,
    InnerSolveOptions,
    LinearizedEstimate,
    linearized,
    project_rank_r,
    solve_min_norm,
)
from rgnmr.obs_model import (
    EntrySet,
    ObservationSet,
    restrict,
    sets_equal,
    top_k_entries,
)
from rgnmr.theory.params import TheoryParams
from rgnmr.theory.spectral import spectral_init
from rgnmr.utils.seeding import RandomStream, rng_for

IterationCallback = Callable[[int, LinearizedEstimate, EntrySet], None]


class InitPolicy(StrEnum):
    RANDOM_GAUSSIAN = "random-gaussian"
    SPECTRAL = "spectral"
    USER_SUPPLIED = "user-supplied"


class SolveStatus(StrEnum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    ILL_POSED = "ill-posed"


class SolveOptions(BaseModel):
    """Run configuration of the outer loop."""

    k: int = Field(default=0, ge=0, description="Number of entries removed per iteration.")
    max_outer_iterations: int = Field(default=100, ge=1)
    outer_tolerance: float = Field(default=1e-12, gt=0)
    lambda_stability_window: int = Field(default=3, ge=1)
    init_policy: InitPolicy = InitPolicy.RANDOM_GAUSSIAN
    init_scale: Optional[float] = Field(
        default=None,
        ge=0,
        description="Gaussian init scale. None means 1e-2 of the RMS observed value.",
    )
    seed: int = Field(default=0, ge=0)
    inner: InnerSolveOptions = Field(default_factory=InnerSolveOptions)
    noise_sigma: float = Field(default=0.0, ge=0)
    early_stop: bool = True
    spectral_mu: Optional[float] = Field(
        default=None,
        ge=1,
        description="Incoherence used by the spectral init policy. None means max(n1, n2) / r.",
    )

    model_config = ConfigDict(extra="forbid")

    def stop_threshold(self) -> Optional[float]:
        """Relative residual below which the loop stops, None when early stopping is off."""

        if not self.early_stop:
            return None

        if self.noise_sigma > 0:
            return max(self.outer_tolerance, float(np.sqrt(self.noise_sigma)))

        return self.outer_tolerance


class SolveResult(BaseModel):
    """Output of a solver run together with its diagnostics."""

    factors: FactorPair
    estimate_builder: LinearizedEstimate
    lambda_final: EntrySet
    lambda_history: list[EntrySet] = Field(default_factory=list)
    lambda_stabilized: bool = False
    residual_history: list[float] = Field(default_factory=list)
    iterations_used: int = 0
    status: SolveStatus

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def final_residual(self) -> Optional[float]:
        return self.residual_history[-1] if self.residual_history else None

    def estimate(self) -> np.ndarray:
        return self.factors.product()


def default_init(n1: int, n2: int, r: int, scale: float, seed: int) -> FactorPair:
    """I.i.d. Gaussian factors with standard deviation scale / sqrt(r)."""

    if min(n1, n2, r) < 1:
        raise InvalidArgumentError("dimensions and rank must be positive")

    rng = rng_for(seed, RandomStream.INIT)
    std = scale / np.sqrt(r)

    u = rng.standard_normal((n1, r)) * std
    v = rng.standard_normal((n2, r)) * std

    return FactorPair(u=u, v=v)


def default_init_scale(obs: ObservationSet) -> float:
    return 1e-2 * float(np.linalg.norm(obs.values)) / np.sqrt(obs.size)


def default_lambda0(obs: ObservationSet, anchor: FactorPair, k: int) -> EntrySet:
    """Top-k entries of |X - U_0 V_0ᵀ| on the observations."""

    residual = obs.values - anchor.values_at(obs.rows, obs.cols)

    return top_k_entries(obs, residual, k)


def lambda_stabilized(history: Sequence[EntrySet], window: int) -> bool:
    """True iff the last `window + 1` sets of the history are identical."""

    if window < 1:
        raise InvalidArgumentError("stability window must be at least 1")

    if len(history) < window + 1:
        return False

    tail = history[-(window + 1) :]

    return all(sets_equal(tail[0], other) for other in tail[1:])


def initial_factors(obs: ObservationSet, r: int, opts: SolveOptions) -> FactorPair:
    """Builds (U_0, V_0) according to the init policy."""

    match opts.init_policy:
        case InitPolicy.RANDOM_GAUSSIAN:
            scale = (
                opts.init_scale
                if opts.init_scale is not None
                else default_init_scale(obs)
            )
            return default_init(obs.n_rows, obs.n_cols, r, scale, opts.seed)
        case InitPolicy.SPECTRAL:
            params = TheoryParams(
                mu=opts.spectral_mu or max(obs.n_rows, obs.n_cols) / r,
                alpha=min(opts.k / obs.size, 0.5),
                gamma=1.0,
                p=obs.sampling_rate,
            )
            return spectral_init(obs, r, params)
        case InitPolicy.USER_SUPPLIED:
            raise InvalidArgumentError(
                "init_policy 'user-supplied' requires the init factors to be passed"
            )


def _relative(residual: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.linalg.norm(reference))
    norm = float(np.linalg.norm(residual))

    return norm / scale if scale > 0 else norm


def run(
    obs: ObservationSet,
    r: int,
    opts: Optional[SolveOptions] = None,
    init: Optional[FactorPair] = None,
    lambda0: Optional[EntrySet] = None,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """Robust Gauss-Newton matrix recovery.

    Each iteration solves the minimal-norm Gauss-Newton least-squares problem on Ω minus Λ_t, then takes
    Λ_t+1 as the k largest residuals of the linearized estimate over all of Ω. The output is the best rank-r
    approximation of the final linearized estimate.

    Args:
    ----
        obs (ObservationSet): The observed, possibly corrupted entries.
        r (int): Target rank.
        opts (SolveOptions, optional): Run configuration.
        init (FactorPair, optional): Initial factors. Built from `opts.init_policy` when omitted.
        lambda0 (EntrySet, optional): Initial removed set of cardinality k. Defaults to the top-k residuals of
            the initial factors.
        callback (IterationCallback, optional): Called with (t, linearized estimate, Λ_t+1) after each step.

    Returns:
    -------
        SolveResult: Factors and diagnostics. A row or column emptied by Λ_t ends the run with status
            ill-posed and the iterate of smallest relative residual.

    Raises:
    ------
        InvalidArgumentError: If r < 1, k > |Ω| or the init/Λ_0 do not fit the observations.
        IllPosedProblemError: If there are no observations."""

    opts = opts or SolveOptions()

    if r < 1:
        raise InvalidArgumentError(f"rank must be at least 1, got {r}")

    if obs.size == 0:
        raise IllPosedProblemError("no observed entries")

    if opts.k > obs.size:
        raise InvalidArgumentError(f"k = {opts.k} exceeds |Ω| = {obs.size}")

    if init is None:
        zt = initial_factors(obs, r, opts)
    elif init.shape != obs.shape or init.rank != r:
        raise InvalidArgumentError(
            f"init has shape {init.shape} and rank {init.rank}, expected {obs.shape} and {r}"
        )
    else:
        zt = init

    if lambda0 is None:
        lam = default_lambda0(obs, zt, opts.k)
    elif lambda0.cardinality != opts.k:
        raise InvalidArgumentError(
            f"lambda0 holds {lambda0.cardinality} entries, expected k = {opts.k}"
        )
    else:
        obs.positions_of(lambda0)
        lam = lambda0

    threshold = opts.stop_threshold()
    lambda_history = [lam]
    residual_history: list[float] = []
    lin = linearized(zt, zt)
    best: Optional[tuple[float, LinearizedEstimate]] = None
    status = SolveStatus.MAX_ITERATIONS

    for t in range(opts.max_outer_iterations):
        active = restrict(obs, lam)

        if active.size == 0 or active.has_empty_line():
            logging.warning(
                f"Iteration {t}: a row or column has no entries left after removing Λ_t"
            )
            status = SolveStatus.ILL_POSED
            break

        rhs = active.values + zt.values_at(active.rows, active.cols)
        zt1 = solve_min_norm(zt, active, rhs, opts.inner)

        lin = linearized(zt, zt1)
        residual = lin.values_at(obs.rows, obs.cols) - obs.values
        kept = ~obs.mask_of(lam)
        relative = _relative(residual[kept], obs.values[kept])
        residual_history.append(relative)

        if best is None or relative < best[0]:
            best = (relative, lin)

        lam = top_k_entries(obs, residual, opts.k)
        lambda_history.append(lam)

        logging.debug(
            f"Iteration {t}: relative residual {relative:.3e}, "
            f"Λ unchanged: {sets_equal(lambda_history[-2], lam)}"
        )

        if callback is not None:
            callback(t, lin, lam)

        zt = zt1

        if threshold is not None and relative <= threshold:
            status = SolveStatus.CONVERGED
            break

    if status == SolveStatus.ILL_POSED and best is not None:
        lin = best[1]
    elif (
        status == SolveStatus.MAX_ITERATIONS
        and residual_history
        and residual_history[-1] <= opts.outer_tolerance
    ):
        status = SolveStatus.CONVERGED

    stabilized = lambda_stabilized(lambda_history, opts.lambda_stability_window)

    logging.info(
        f"Finished with status {status} after {len(residual_history)} iterations "
        f"(k={opts.k}, Λ stabilized: {stabilized})"
    )

    return SolveResult(
        factors=project_rank_r(lin, r),
        estimate_builder=lin,
        lambda_final=lambda_history[-1],
        lambda_history=lambda_history,
        lambda_stabilized=stabilized,
        residual_history=residual_history,
        iterations_used=len(residual_history),
        status=status,
    )
