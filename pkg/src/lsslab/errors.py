"""Exception hierarchy.

Input-side problems (bad arguments, malformed files) derive from
``InputError`` and map to CLI exit code 1; failures during a run map to 2.
"""


class LssError(Exception):
    pass


class InputError(LssError, ValueError):
    pass


class ParameterError(InputError):
    pass


class ShapeError(InputError):
    pass


class DegenerateInputError(InputError):
    pass


class ConfigError(InputError):
    pass


class LoadError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(LssError, ArithmeticError):
    pass
