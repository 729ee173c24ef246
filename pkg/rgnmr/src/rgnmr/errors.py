# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.


class RgnmrError(Exception):
    """Base class for all errors raised by the robust completion toolkit."""


class InvalidArgumentError(RgnmrError, ValueError):
    """An argument or configuration value is outside of its documented domain."""


class IllPosedProblemError(RgnmrError):
    """The least squares problem has no observations to fit (or a row/column lost all of them)."""


class InfeasibleSamplingError(RgnmrError):
    """A sampler could not satisfy its verification check within the resampling budget."""


class SolverConvergenceError(RgnmrError):
    """An iterative decomposition did not converge."""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class ConstraintViolationError(RgnmrError):
    """A constrained iterate left its feasible set."""
