"""Exception hierarchy shared by every module."""


class SanerError(Exception):
    pass


class ShapeError(SanerError, ValueError):
    pass


class SchemeError(SanerError, ValueError):
    pass


class ParseError(SanerError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(SanerError, ValueError):
    pass


class CoverageError(SanerError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UndefinedSimilarityError(SanerError, ValueError):
    pass


class StateError(SanerError, RuntimeError):
    pass


class NonFiniteError(SanerError, FloatingPointError):
    pass


class DivergenceError(SanerError, RuntimeError):
    pass


class UnsupportedModeError(SanerError, ValueError):
    pass


class ConfigError(SanerError, ValueError):
    pass
