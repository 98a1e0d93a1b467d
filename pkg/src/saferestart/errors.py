"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class SafeRestartError(Exception):
    """Base class for all errors raised by this package."""


class NotFoundError(SafeRestartError, LookupError):
    """A referenced service (or transaction) does not exist."""


class IngestError(SafeRestartError):
    """The trace source could not be read at all."""


class ConfigError(SafeRestartError, ValueError):
    """A caller supplied an invalid configuration value or format tag."""


class SchemaError(SafeRestartError, ValueError):
    """A remediation document violates the ISA schema.

    ``field`` names the first violated field using a dotted/indexed path
    such as ``actions[0].compensation``.
    """

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class ContractError(SafeRestartError):
    """An operation was called outside its documented precondition."""


class EvaluationError(SafeRestartError):
    """Harm evaluation could not run (for example, too little baseline)."""


class WalCorruptionError(SafeRestartError):
    """The write-ahead log is damaged somewhere other than its final record."""
