"""Exception types shared across the package.

The CLI maps these onto exit codes: RequestError -> 1,
ValidationError (and subclasses) -> 2, NumericalError -> 3.
"""


class GraphShardError(Exception):
    """Base class for all package errors."""


class ValidationError(GraphShardError):
    """Invalid argument, malformed input, or broken invariant."""


class ParseError(ValidationError):
    """Malformed input file; message carries the offending line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class RequestError(GraphShardError):
    """Invalid unlearning request (unknown id, already unlearned, conflict)."""


class NumericalError(GraphShardError):
    """A numerical routine (SVD, eigen-solver) failed to produce a result."""
