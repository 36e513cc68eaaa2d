"""Exception types shared across the package."""


class CaladinError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(CaladinError, ValueError):
    """An argument violates a documented precondition."""


class LatticeRangeError(InvalidInputError):
    """A lattice index does not fit the integer representation."""


class TopologyError(CaladinError, ValueError):
    """A communication graph fails a structural requirement."""


class ConvergenceError(CaladinError, RuntimeError):
    """An iterative solve ran out of budget.

    Carries the best iterate seen and its optimality residual so callers
    can inspect how close the solve got.
    """

    def __init__(self, message, iterate=None, residual=None, agent=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.agent = agent


class ProtocolError(CaladinError, RuntimeError):
    """The message-passing protocol exceeded its round cap."""


class OracleError(CaladinError, RuntimeError):
    """A reference-solution computation failed."""


class DiagnosticUnavailableError(CaladinError, RuntimeError):
    """A diagnostic cannot be evaluated from the data supplied."""


class ConfigError(CaladinError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class TraceSchemaError(CaladinError, ValueError):
    """A trace file does not carry the expected columns."""
