"""Errors raised by rigidflow.

Every error carries the process exit code used by the command line interface:
2 for configuration problems, 3 for numerical failures and 4 for invariant violations.
"""


class RigidflowError(Exception):
    """Base class of every rigidflow error"""

    exit_code = 1


class ConfigInvalid(RigidflowError, ValueError):
    """Scenario, sweep plan or argument validation failed"""

    exit_code = 2


class GridMismatch(RigidflowError, ValueError):
    """Fields or runs that must share a grid (or a time grid) do not"""

    exit_code = 2


class InadmissibleTestField(RigidflowError, ValueError):
    """A test field is not divergence free or not rigid near the body"""

    exit_code = 2


class MarginsOverlap(RigidflowError, ValueError):
    """Cutoff zones around the body and along the walls intersect"""

    exit_code = 2


class DominationViolated(RigidflowError, ValueError):
    """An observable pair violates |F| <= G on a sample"""

    exit_code = 2


class NumericalFailure(RigidflowError, ArithmeticError):
    """Base class of numerical failures"""

    exit_code = 3


class QuadratureNotConverged(NumericalFailure):
    pass


class CflViolation(NumericalFailure):
    pass


class CollisionMargin(NumericalFailure):
    """The body came within half the collision margin of the container wall

    The last admissible state is kept in ``state`` so callers can persist partial outputs.
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class PoissonDiverged(NumericalFailure):
    pass


class NodeEscapedDomain(NumericalFailure):
    pass


class NewtonStalled(NumericalFailure):
    pass


class SingularJacobian(NumericalFailure):
    pass


class InvariantViolation(RigidflowError, AssertionError):
    """A checked invariant or identity does not hold within its tolerance"""

    exit_code = 4
