"""Exception hierarchy shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericalFault`
to exit code 3.
"""


class LifespanError(Exception):
    """Base class for all package errors."""


class ConfigError(LifespanError):
    """Invalid configuration, mesh, or input file."""


class DataError(LifespanError, ValueError):
    """Input data violates a precondition (non-finite values, bad shapes)."""


class DomainError(LifespanError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class MeshError(ConfigError):
    """Mesh violates a structural invariant."""


class NumericalFault(LifespanError):
    """Solver breakdown or non-finite values during training."""


class SolverError(NumericalFault):
    """Linear system could not be solved to the required tolerance."""


class ContractError(LifespanError):
    """A function was called outside its documented contract."""


class NotReady(LifespanError):
    """Requested data does not exist yet (e.g. unfinalized episodes)."""


class VersionError(ConfigError):
    """Checkpoint or config was written by an incompatible version."""
