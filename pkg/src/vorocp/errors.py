"""Exception types shared across the package."""


class VorocpError(Exception):
    """Base class for errors raised by vorocp."""


class DegenerateInputError(VorocpError):
    """Geometry that cannot be processed (collinear sites, flat polygons)."""


class DegenerateColumnError(VorocpError):
    """A statistical operation hit a constant (zero variance) column."""

    def __init__(self, column: str, message: str | None = None):
        self.column = column
        super().__init__(message or f"column {column!r} is constant (zero variance)")


class EigenSolveError(VorocpError):
    """The eigenvalue solve failed or violated its residual contract."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class DivergenceError(VorocpError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class ParseError(VorocpError):
    """A file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" in {path}"
        if line is not None:
            where += f", line {line}"
        super().__init__(f"{message}{where}")
