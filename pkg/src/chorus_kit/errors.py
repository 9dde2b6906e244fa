"""Exception hierarchy shared by every chorus_kit module.

The CLI maps these onto its exit codes: usage problems exit 1, malformed
data exits 2, numeric failures exit 3.
"""

from __future__ import annotations


class ChorusKitError(Exception):
    """Base class for all toolkit errors."""


class UsageError(ChorusKitError):
    """A call that violates an operation's preconditions."""


class DimensionError(UsageError, ValueError):
    """Tensor shapes that an op cannot combine."""

    def __init__(self, op: str, message: str, dims=()):
        self.op = op
        self.dims = tuple(tuple(d) for d in dims)
        detail = ", ".join(str(d) for d in self.dims)
        super().__init__(f"{op}: {message}" + (f" (dims: {detail})" if detail else ""))


class NumericError(ChorusKitError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class FormatError(ChorusKitError, ValueError):
    """A file that does not match its declared format."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ParseError(FormatError):
    """A text file with a bad line."""

    def __init__(self, message: str, line: int, path=None):
        self.line = line
        self.offset = None
        self.path = path
        prefix = f"{path}: " if path is not None else ""
        ValueError.__init__(self, f"{prefix}line {line}: {message}")
