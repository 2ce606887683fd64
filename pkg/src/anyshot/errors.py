"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operation received operands with incompatible shapes."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during graph evaluation or training."""


class UnsupportedOpError(ValueError):
    """Differentiation hit an operation outside the supported set."""


class ConfigError(ValueError):
    """A configuration file or mapping failed validation."""


class DataFormatError(ValueError):
    """A dataset file is malformed or inconsistent with its manifest."""


class AccessViolation(RuntimeError):
    """A guarded data view was read from a forbidden code path."""
