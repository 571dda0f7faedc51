"""Exception hierarchy shared by every fedfair module."""


class FedFairError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(FedFairError, ValueError):
    pass


class InsufficientSamples(FedFairError):
    pass


class EmptyClient(FedFairError):
    pass


class FormatError(FedFairError, ValueError):
    pass


class ShapeMismatch(FedFairError, ValueError):
    pass


class EmptyData(FedFairError, ValueError):
    pass


class ArchMismatch(FedFairError, ValueError):
    pass


class LengthMismatch(FedFairError, ValueError):
    pass


class RangeError(FedFairError, ValueError):
    pass


class EmptySet(FedFairError, ValueError):
    pass


class ZeroVector(FedFairError, ValueError):
    pass


class NonPositiveValue(FedFairError, ValueError):
    pass


class MissingColumn(FedFairError, KeyError):
    pass
