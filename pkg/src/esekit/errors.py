"""Shared exception types.

The CLI maps these onto exit codes: usage errors -> 1, data validation
errors -> 2, provider failures -> 3, empty expansions -> 4.
"""


class EsekitError(Exception):
    """Base class for all package errors."""


class UsageError(EsekitError):
    """Bad arguments or configuration supplied by the caller."""


class DataValidationError(EsekitError):
    """Input data violates a documented format or invariant."""

    def __init__(self, message: str, lines: list[str] | None = None):
        super().__init__(message)
        # one "file:line: problem" string per offending record
        self.lines = lines or []

    def report(self) -> str:
        if not self.lines:
            return str(self)
        return str(self) + "\n" + "\n".join(self.lines)


class ProviderError(EsekitError):
    """A provider call failed (network, timeout, or server-reported)."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class ProtocolError(ProviderError):
    """A provider reply did not conform to the wire protocol."""


class EmptyExpansionError(EsekitError):
    """An expansion run produced no entities for any query."""
