"""Exception hierarchy.

Model problems derive from :class:`ModelError` (CLI exit code 2); numerical
failures of the spectral and limit routines derive from
:class:`NumericalError`.
"""


class ModelError(ValueError):
    """A chain family or its configuration violates a structural assumption."""


class ParseError(ModelError):
    pass


class NegativeRate(ModelError):
    pass


class BrokenBlockStructure(ModelError):
    pass


class MissingTailConstancy(ModelError):
    pass


class NonPositiveDrift(ModelError):
    pass


class BadClassSplit(ModelError):
    pass


class EdgeCoordMismatch(ValueError):
    pass


class StepTooLarge(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class SingularSolve(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NoGridConvergence(NumericalError):
    pass


class DeltaOutOfRange(ValueError):
    pass


class EigenNotSimple(NumericalError):
    pass


class NoQRConvergence(NumericalError):
    pass


class DegenerateBasis(NumericalError):
    pass


class EmptyLaw(ValueError):
    pass


class HorizonExceeded(RuntimeWarning):
    """A first-exit run hit its time cap; reported in results, never raised by default."""
