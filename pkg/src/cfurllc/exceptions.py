"""Exception hierarchy shared by all modules."""


class CfUrllcError(Exception):
    """Base class for package errors."""


class DomainError(CfUrllcError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigError(CfUrllcError, ValueError):
    """A scenario or precoding configuration is invalid."""


class InfeasibleError(CfUrllcError):
    """A requested target cannot be reached (e.g. a rate above the FBL region)."""


class SolverError(CfUrllcError):
    """The GP solver did not return an optimal point.

    Parameters
    ----------
    status : str
        Solver status string.
    iteration : int or None
        SCA iteration index at which the failure happened, if any.
    """

    def __init__(self, status, iteration=None, message=""):
        self.status = status
        self.iteration = iteration
        where = f" at SCA iteration {iteration}" if iteration is not None else ""
        super().__init__(f"GP solver returned {status}{where}. {message}".strip())
