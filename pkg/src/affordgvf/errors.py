"""Exception hierarchy shared by every module of the package."""


class AffordGvfError(Exception):
    """Base class for all package errors."""


class InvalidParameter(AffordGvfError, ValueError):
    pass


class InvalidArgument(AffordGvfError, ValueError):
    pass


class NumericOverflow(AffordGvfError, ArithmeticError):
    """An update would have produced non-finite weights."""


class CoverageViolation(AffordGvfError):
    """Behavior policy gave zero probability to an action the target policy takes."""


class PolicyMismatch(AffordGvfError):
    pass


class ProtocolError(AffordGvfError, RuntimeError):
    """Environment used out of order, e.g. stepping after termination."""


class NotAvailable(AffordGvfError):
    pass


class NoSolution(AffordGvfError):
    pass


class ResourceLimit(AffordGvfError):
    pass


class ConfigError(AffordGvfError, ValueError):
    pass


class EmptyTarget(ConfigError):
    pass


class ModelFileError(AffordGvfError, OSError):
    pass


class VersionMismatch(ModelFileError):
    pass


class CorruptFile(ModelFileError):
    pass
