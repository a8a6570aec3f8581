"""Exception hierarchy. ConfigError maps to exit code 2, NumericalError to 3."""


class HpaDynError(Exception):
    """Base class for all errors raised by hpa_dyn."""


class ConfigError(HpaDynError, ValueError):
    """Invalid parameters, kernels or config documents."""


class NumericalError(HpaDynError):
    """A computation could not produce a trustworthy answer."""


class EmptyBracket(NumericalError):
    pass


class ZeroPolynomial(NumericalError):
    pass


class UnsupportedDegree(NumericalError):
    pass


class PoleRegion(NumericalError):
    pass


class TransversalityDegenerate(NumericalError):
    pass


class DegenerateCrossing(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class DelayNotGridAligned(NumericalError):
    pass


class TooShort(NumericalError):
    pass


class BracketInvalid(NumericalError):
    pass
