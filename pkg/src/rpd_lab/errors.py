"""Exception types raised across rpd_lab."""

from __future__ import annotations


class RpdError(Exception):
    """Base class for all library errors."""


class NonStochasticRow(RpdError, ValueError):
    def __init__(self, row: int, total: float):
        self.row = row
        self.total = total
        super().__init__(f"row {row} sums to {total!r}, expected 1")


class NegativeEntry(RpdError, ValueError):
    pass


class MultipleClosedClasses(RpdError):
    pass


class SingularSystem(RpdError):
    pass


class TransientStart(RpdError, ValueError):
    pass


class ThresholdTooLarge(RpdError, ValueError):
    pass


class EigSolverFailure(RpdError):
    pass


class NoSuchEigenvalue(RpdError):
    pass


class DegenerateEigenvalue(RpdError):
    pass


class InconsistentEvidence(RpdError):
    pass


class ParameterOutOfRange(RpdError, ValueError):
    pass


class TooManyFailures(RpdError):
    def __init__(self, n_failed: int, n_total: int):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(f"{n_failed} of {n_total} pull-backs did not converge")


class AxiomViolation(RpdError):
    pass


class PartitionMismatch(RpdError, ValueError):
    pass
