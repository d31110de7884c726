# Exceptions raised by frobinv. Input and domain problems derive from ValueError,
# numerical failures of the solvers derive from RuntimeError.


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class DomainError(ValueError):
    """A state lies outside the guard of a potential or field."""


class SingularReductionError(DomainError):
    """The general field has B = A·p at the requested state."""


class ShockError(DomainError):
    """Characteristics of the Giacomini potential have crossed at (q, t)."""


class FamilyConstructionError(ValueError):
    """A family cannot be built from the passed parameter functions."""


class BracketError(ValueError):
    """No sign change was found for a bracketed root search."""


class ConvergenceError(RuntimeError):
    """A root finder or quadrature did not reach the requested tolerance."""


class StiffnessError(RuntimeError):
    """The integrator step size underflowed."""


class BudgetError(RuntimeError):
    """The integrator exceeded its maximum number of steps."""


class DegenerateScanError(ValueError):
    """Every point of a scan or sample was excluded by the guards."""


class UnsupportedCheckError(ValueError):
    """The requested check does not apply to the passed family."""
