"""Exception types shared across solvers."""


class InstanceError(ValueError):
    """Malformed problem data (dimension mismatch, bad constraint bounds...)."""


class UnsupportedOperation(TypeError):
    """Operation not available for this kind of component."""


class SolverError(RuntimeError):
    """An inner minimization failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UnboundedDual(SolverError):
    """Lagrangian minimization is unbounded below, so q_i(lambda) = -inf."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class Diverged(RuntimeError):
    """Iterates blew up; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class TuningFailure(RuntimeError):
    pass


class OracleUnavailable(RuntimeError):
    pass
