"""Exception types shared across the package."""


class InceError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(InceError, ValueError):
    """An argument breaks an operation's documented preconditions."""


class NumericError(InceError, ArithmeticError):
    """A NaN or infinity appeared in a forward or backward computation."""


class SchemaError(InceError, ValueError):
    pass


class ParseError(InceError, ValueError):
    pass


class CheckpointError(InceError):
    pass


class ChecksumError(CheckpointError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


class UnsupportedOperation(InceError, NotImplementedError):
    pass


class DatasetUnavailable(InceError, FileNotFoundError):
    """A benchmark dataset is not present locally and cannot be fetched."""


class ParamCountMismatch(InceError, AssertionError):
    """Constructed encoder parameters disagree with the closed-form count."""
