"""Exception hierarchy shared by all engine components."""


class LaraError(Exception):
    """Base class for everything this package raises on purpose."""


class StructuralError(LaraError):
    """A data-model invariant is violated (arity, key-functionality, bad cast)."""


class SortError(LaraError):
    """Static sort checking of an expression or declaration failed."""


class EvaluationError(LaraError):
    """An operation is undefined on the concrete values it was given."""


class SafetyError(LaraError):
    """A formula falls outside the checkable safe fragment."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class ParseError(LaraError):
    """Syntax error; carries a 1-based source position when known."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class LoadError(LaraError):
    """A data file could not be loaded or validated."""
