"""Exception hierarchy shared across the package."""


class PsnymError(Exception):
    """Base class for all errors raised by this package."""


# filters
class ParamsMismatch(PsnymError):
    pass


class VersionMismatch(PsnymError):
    pass


class CorruptPayload(PsnymError):
    pass


class Underflow(PsnymError):
    """A counter would drop below zero: the key was never inserted."""


# credentials
class WindowOutsideCoverage(PsnymError):
    pass


class UnknownPseudonym(PsnymError):
    pass


# analytics
class DomainError(PsnymError, ValueError):
    pass


class Unstable(PsnymError):
    """Queue utilization is at or above one, so the mean system time is unbounded."""

    def __init__(self, rho: float):
        super().__init__(f"queue is unstable: rho={rho:.6g} >= 1")
        self.rho = rho


# service
class MalformedRequest(PsnymError):
    pass


class NotAvailable(PsnymError):
    pass


class ReportRejected(PsnymError):
    pass


# cli
class BadSpec(PsnymError):
    pass
