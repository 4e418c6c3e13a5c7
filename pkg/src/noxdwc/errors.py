"""Exception hierarchy.

The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`NumericError` subclasses to exit code 3.
"""


class NoxDwcError(Exception):
    """Base class for all package errors."""


class DataError(NoxDwcError):
    """Input data is missing, malformed or inconsistent."""


class SchemaError(DataError):
    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"missing mandatory column: {column}")


class EmptyInputError(DataError):
    pass


class MissingArtifactError(DataError):
    """A downstream command was run before the command that produces its input."""

    def __init__(self, path, command: str):
        self.path = path
        self.command = command
        super().__init__(f"{path} not found; run `noxdwc {command}` first")


class NumericError(NoxDwcError):
    """A numerical routine could not produce a valid result."""


class PropertyRangeError(NumericError, ValueError):
    pass


class SaturationError(NumericError):
    def __init__(self, edge: float):
        self.edge = edge
        super().__init__(f"adiabatic flame temperature exceeds property range edge {edge} K")


class RichMixtureError(NumericError, ValueError):
    pass


class SingularityError(NumericError, ValueError):
    pass


class ArityError(NoxDwcError, ValueError):
    pass
