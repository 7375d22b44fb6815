"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: parse/config/data problems exit 2,
numeric failures exit 3.
"""


class FlowtransError(Exception):
    """Base class for all engine errors."""


class DomainError(FlowtransError, ValueError):
    """An argument is outside its mathematical domain (m > 1, T < 2, lr <= 0, ...)."""


class ShapeError(FlowtransError, ValueError):
    """Array shapes or channel counts do not match the operation's contract."""


class TagError(FlowtransError, ValueError):
    """A latent tensor was produced by a different codec than the one decoding it."""


class ParseError(FlowtransError, ValueError):
    """A persisted file (JSON params, chip container, checkpoint) is malformed."""


class ConfigError(FlowtransError, ValueError):
    """A run configuration is invalid or incompatible with an artifact."""


class PairingError(FlowtransError, ValueError):
    """Result/ground-truth collections cannot be aligned."""


class DegenerateError(FlowtransError, ValueError):
    """Input data has no spread where spread is required (constant channel, zero variance)."""


class NumericError(FlowtransError, ArithmeticError):
    """A non-finite value appeared where finite math was required."""
