"""Shared exception types.

The CLI maps these onto exit codes: configuration problems exit with 2,
validation/parse failures with 3.
"""


class ShapeError(ValueError):
    """Tensor shapes or index bounds do not line up."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class GroundingParseError(ValueError):
    """A grounding JSON payload failed structural validation."""
