"""Exception hierarchy shared by all modules.

The CLI maps the three base classes onto exit codes 2, 3 and 4.
"""


class InvalidInputError(ValueError):
    """Malformed or inconsistent input (exit code 2)."""


class NumericFailure(RuntimeError):
    """A numerical procedure could not produce a result (exit code 3)."""


class CertificationFailure(RuntimeError):
    """A computed quantity failed a certificate or proved bound (exit code 4)."""


class UnsupportedResonanceError(InvalidInputError):
    """Resonance vector with first component different from one."""


class DomainError(InvalidInputError):
    """Action-angle chart is singular at the requested actions."""


class TwistError(NumericFailure):
    """The quadratic action matrix is singular."""


class ResourceError(NumericFailure):
    """A series computation exceeded its term budget."""


class IntegrationError(NumericFailure):
    """The ODE integrator failed."""


class DomainExitError(NumericFailure):
    """A trajectory left the region where the chart is valid."""


class UnsupportedDegeneracyError(NumericFailure):
    """Kernel of the reduced block is not one-dimensional."""


class InconclusiveCriterion(NumericFailure):
    """The eigenvalue criterion vanishes; a higher order is needed."""
