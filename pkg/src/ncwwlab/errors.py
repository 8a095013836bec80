"""Exception hierarchy shared by every ncwwlab module."""


class NcwwError(ValueError):
    """Base class for all library errors."""


# tracealg
class EmptyBlockList(NcwwError):
    pass


class NonpositiveWeight(NcwwError):
    pass


class NonpositiveDim(NcwwError):
    pass


class AlgebraMismatch(NcwwError):
    pass


class InvalidExponent(NcwwError):
    pass


class NotSelfAdjoint(NcwwError):
    pass


# weights
class NotUnimodular(NcwwError):
    pass


class InvalidHorizon(NcwwError):
    pass


class ClassMismatch(NcwwError):
    pass


class InvalidWindow(NcwwError):
    pass


class DriftWarning(UserWarning):
    """A sequence declared convergent drifts away from its declared limit."""


# superop
class NotContraction(NcwwError):
    pass


class NotAutomorphism(NcwwError):
    pass


class NotProbability(NcwwError):
    pass


class IncompatibleSubalgebra(NcwwError):
    pass


class NotCoprime(NcwwError):
    pass


class NonpositiveTime(NcwwError):
    pass


# spectral
class UnimodularGap(NcwwError):
    pass


class NotPowerBounded(NcwwError):
    pass


class DecompositionDegenerate(NcwwError):
    pass


class NotL2Contraction(NcwwError):
    pass


# harness
class BudgetTooSmall(NcwwError):
    pass


# cli
class ParseError(NcwwError):
    pass


class ValidationError(NcwwError):
    pass
