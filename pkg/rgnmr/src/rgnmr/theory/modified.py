# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
from typing import Optional

import numpy as np

from rgnmr.errors import ConstraintViolationError, InvalidArgumentError
from rgnmr.gn_step import (
    FactorPair,
    InnerSolveOptions,
    linearized,
    solve_damped,
    solve_min_norm,
)
from rgnmr.obs_model import ObservationSet, restrict, threshold_top_fraction
from rgnmr.solver import IterationCallback, SolveResult, SolveStatus, lambda_stabilized
from rgnmr.theory.geometry import in_b_mu, in_c_neighborhood, row_norm_bounds
from rgnmr.theory.params import TheoryParams
from rgnmr.theory.spectral import clip_rows

DAMP_START = 1e-6
DAMP_GROWTH_STEPS = 60
DAMP_BISECTION_STEPS = 30
CONSTRAINT_RTOL = 1e-9


def _squared_norm(d: FactorPair) -> float:
    return float(np.sum(d.u**2) + np.sum(d.v**2))


def constrained_step(
    anchor: FactorPair,
    active: ObservationSet,
    radius: float,
    inner: InnerSolveOptions,
) -> tuple[FactorPair, float]:
    """Least-squares update d with ‖d‖² ≤ radius, found as a ridge problem.

    The undamped minimal-norm update is tried first. If it leaves the ball, the damping is grown until the
    update fits and then bisected (on a log scale) towards the boundary. Returns the update and the damping
    used."""

    rhs = active.values - anchor.values_at(active.rows, active.cols)

    step = solve_min_norm(anchor, active, rhs, inner)
    if _squared_norm(step) <= radius:
        return step, 0.0

    infeasible, feasible = 0.0, DAMP_START
    candidate = solve_damped(anchor, active, rhs, feasible, inner)

    for _ in range(DAMP_GROWTH_STEPS):
        if _squared_norm(candidate) <= radius:
            break

        infeasible, feasible = feasible, feasible * 4.0
        candidate = solve_damped(anchor, active, rhs, feasible, inner)
    else:
        logging.warning("No damping kept the update inside the neighborhood, freezing the iterate")
        return FactorPair.zeros(anchor.n_rows, anchor.n_cols, anchor.rank), np.inf

    for _ in range(DAMP_BISECTION_STEPS):
        if _squared_norm(candidate) >= 0.95 * radius:
            break

        middle = (
            np.sqrt(infeasible * feasible) if infeasible > 0 else feasible / 4.0
        )
        trial = solve_damped(anchor, active, rhs, middle, inner)

        if _squared_norm(trial) <= radius:
            feasible, candidate = middle, trial
        else:
            infeasible = middle

    return candidate, feasible


def run_modified(
    obs: ObservationSet,
    r: int,
    params: TheoryParams,
    T: int,
    init: FactorPair,
    inner: Optional[InnerSolveOptions] = None,
    tolerance: float = 1e-12,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """The constrained variant with thresholded outlier removal.

    Each iteration removes the support of 𝒯_γα(U_t V_tᵀ - X), solves the Gauss-Newton least-squares problem
    inside the ball of squared radius δ / 4^(t+1) around the current pair, and clips the rows into the
    incoherent set. Clipping is a projection onto a convex set holding the current pair, so it keeps the
    update inside the ball.

    Args:
    ----
        obs (ObservationSet): The observations.
        r (int): Target rank.
        params (TheoryParams): Needs sigma1_star and sigmar_star.
        T (int): Number of iterations.
        init (FactorPair): Initial factors, usually from spectral_init.
        inner (InnerSolveOptions, optional): Krylov settings.
        tolerance (float): Relative residual reported as converged.
        callback (IterationCallback, optional): Called with (t, estimate, Λ_t) after each step.

    Returns:
    -------
        SolveResult: Holds the plain pair (U_T, V_T), not a projected linearization.

    Raises:
    ------
        InvalidArgumentError: On missing spectrum estimates or mismatched init.
        ConstraintViolationError: If an iterate leaves the constraint sets."""

    sigma1, _ = params.require_spectrum()

    if T < 1:
        raise InvalidArgumentError("T must be at least 1")

    if init.shape != obs.shape or init.rank != r:
        raise InvalidArgumentError(
            f"init has shape {init.shape} and rank {init.rank}, expected {obs.shape} and {r}"
        )

    inner = inner or InnerSolveOptions()
    delta = params.resolved_delta()
    eta1, eta2 = row_norm_bounds(obs.n_rows, obs.n_cols, r, params.mu, sigma1)

    zt = FactorPair(u=clip_rows(init.u, eta1), v=clip_rows(init.v, eta2))
    lambda_history = []
    residual_history: list[float] = []
    status = SolveStatus.MAX_ITERATIONS

    for t in range(T):
        residual = zt.values_at(obs.rows, obs.cols) - obs.values
        lam = threshold_top_fraction(obs, residual, params.theta)
        lambda_history.append(lam)

        active = restrict(obs, lam)
        if active.size == 0 or active.has_empty_line():
            logging.warning(f"Iteration {t}: thresholding emptied a row or column")
            status = SolveStatus.ILL_POSED
            break

        radius = delta / 4.0 ** (t + 1)
        step, damp = constrained_step(zt, active, radius, inner)

        zt1 = FactorPair(
            u=clip_rows(zt.u + step.u, eta1), v=clip_rows(zt.v + step.v, eta2)
        )

        if not in_b_mu(zt1, params.mu, sigma1, rtol=CONSTRAINT_RTOL):
            raise ConstraintViolationError(f"iterate {t + 1} has rows above the incoherence bound")

        rounding = 4.0 * np.finfo(np.float64).eps * (zt.frobenius_norm() + zt1.frobenius_norm())
        if not in_c_neighborhood(zt1, zt, radius, rtol=CONSTRAINT_RTOL, atol=rounding):
            raise ConstraintViolationError(f"iterate {t + 1} left the neighborhood of radius {radius}")

        fit = zt1.values_at(active.rows, active.cols) - active.values
        relative = float(np.linalg.norm(fit) / max(np.linalg.norm(active.values), np.finfo(float).tiny))
        residual_history.append(relative)

        logging.debug(
            f"Iteration {t}: removed {lam.cardinality}, damping {damp:.3e}, relative residual {relative:.3e}"
        )

        zt = zt1

        if callback is not None:
            callback(t, linearized(zt, zt), lam)

    if status == SolveStatus.MAX_ITERATIONS and residual_history and residual_history[-1] <= tolerance:
        status = SolveStatus.CONVERGED

    logging.info(f"Constrained variant finished with status {status} after {len(residual_history)} iterations")

    return SolveResult(
        factors=zt,
        estimate_builder=linearized(zt, zt),
        lambda_final=lambda_history[-1],
        lambda_history=lambda_history,
        lambda_stabilized=lambda_stabilized(lambda_history, 3),
        residual_history=residual_history,
        iterations_used=len(residual_history),
        status=status,
    )
