"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AtmosphereError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(AtmosphereError):
    """An event violates its declared schema."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnknownStreamError(AtmosphereError):
    """A stream name has no registered schema."""

    def __init__(self, stream: str):
        super().__init__(f"unknown stream: {stream!r}")
        self.stream = stream


class PayloadError(AtmosphereError):
    """A wire payload is not decodable (malformed JSON, wrong shape)."""


class FieldTypeError(AtmosphereError):
    """Two field values of incompatible types were compared."""


class MqttProtocolError(AtmosphereError):
    """Malformed or protocol-violating MQTT packet."""


class UnsupportedFeatureError(AtmosphereError):
    """A known construct outside the implemented subset."""

    def __init__(self, feature: str, message: str | None = None):
        super().__init__(message or f"unsupported feature: {feature}")
        self.feature = feature


class PatternSyntaxError(AtmosphereError):
    """Pattern text failed to parse; carries the source position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class PatternSemanticError(AtmosphereError):
    """Pattern parsed but fails a validation rule."""


class DeploymentError(AtmosphereError):
    """Pattern cannot be deployed (cycle, unknown stream, duplicate name)."""


class TimeRegressionError(AtmosphereError):
    """An event-time clock was asked to move backwards."""


class GatewayError(AtmosphereError):
    """Agent gateway misuse (e.g. unregistered sender)."""


class GuardError(AtmosphereError):
    """A rule guard failed to evaluate (type error, bad reference)."""


class ConfigError(AtmosphereError):
    """Scenario configuration is invalid; ``path`` is a JSON-pointer-ish location."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TransportError(AtmosphereError):
    """Connection setup or I/O failure on a transport link."""
