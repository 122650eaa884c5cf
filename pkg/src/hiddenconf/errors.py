"""Exception hierarchy. The CLI maps these onto exit codes."""


class HiddenConfError(Exception):
    exit_code = 1


class UsageError(HiddenConfError, ValueError):
    """Bad arguments or configuration."""

    exit_code = 2


class ConfigurationError(UsageError):
    pass


class DataError(HiddenConfError, ValueError):
    """Input data that cannot be parsed or used."""

    exit_code = 3


class ParseError(DataError):
    pass


class DegenerateInputError(DataError):
    """The statistic is undefined for this input (e.g. a constant column)."""


class InsufficientDataError(DataError):
    pass


class NumericalError(HiddenConfError, ArithmeticError):
    exit_code = 4


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of a closed-form expression."""


class SampleSizeWarning(UserWarning):
    pass
