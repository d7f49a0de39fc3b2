"""Exception hierarchy shared by every module of the package."""


class FilterError(Exception):
    """Base class for all errors raised by pfgspf."""


class InvalidArgument(FilterError, ValueError):
    """A caller supplied an argument that violates a precondition."""


class NumericalFailure(FilterError, ArithmeticError):
    """A computation produced non-finite values or an unfactorizable matrix."""


class DegenerateWeights(NumericalFailure):
    """All importance weights of a particle set (or mixture) vanished.

    ``component`` identifies the offending mixture component when known.
    """

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConfigError(FilterError, ValueError):
    """A campaign configuration file could not be parsed or validated."""

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
