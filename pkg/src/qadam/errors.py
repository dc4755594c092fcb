"""Exception hierarchy shared across the package."""


class QAdamError(Exception):
    """Base class for all errors raised by qadam."""


class ShapeError(QAdamError, ValueError):
    """Operands have mismatched lengths."""


class DomainError(QAdamError, ValueError):
    """Non-finite values or arguments outside an operation's domain."""


class ConfigError(QAdamError, ValueError):
    """Invalid hyperparameter, bit width, or run configuration.

    ``field`` names the offending setting when known, so the CLI can report it.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class CorruptionError(QAdamError, ValueError):
    """A quantized message carries codes or padding that cannot be valid."""


class WireFormatError(QAdamError, ValueError):
    """A byte frame does not start with the expected magic tag."""


class WireLengthError(QAdamError, ValueError):
    """A byte frame is truncated or has trailing bytes."""


class ProtocolError(QAdamError, RuntimeError):
    """Server/worker messages disagree on round, sender, or count."""


class UndefinedDeltaError(QAdamError, ValueError):
    """Contraction factor requested for a zero vector."""


class MissingSnapshotsError(QAdamError, ValueError):
    """A check needs state snapshots the trace does not carry."""
