"""Exception types shared across the package."""


class PilotloopError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(PilotloopError):
    """Operands have incompatible shapes."""


class NotHurwitz(PilotloopError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= 0."""


class NotStabilizable(PilotloopError):
    """No stabilizing feedback exists for the given (A, B) pair."""


class NoConvergence(PilotloopError):
    """An iterative solver failed to reach its tolerance."""


class SingularDCGain(PilotloopError):
    """The steady-state input/output map is singular; the feed-forward
    gain cannot be formed on this channel."""


class OutOfBounds(PilotloopError):
    """An adaptive parameter entered the projection operator outside its
    box; this indicates an integrator misconfiguration."""


class StepTooLarge(PilotloopError):
    """The integration step exceeds the smallest delayed-lookup lag."""


class NonFiniteState(PilotloopError):
    """A state entry became NaN/Inf during integration."""

    def __init__(self, time, signal="state"):
        self.time = float(time)
        self.signal = signal
        super().__init__(f"non-finite value in '{signal}' at t={time:.6f} s")


class RangeNotLogged(PilotloopError):
    """A diagnostics query addressed a time outside the logged span."""


class EmptyWindow(PilotloopError):
    """A metrics window contains no samples."""


class ParseError(PilotloopError):
    """A scenario file could not be parsed."""


class ValidationError(PilotloopError):
    """A scenario violates one of its declared invariants."""
