"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError/FormatError/IO -> 2,
NumericError/TrainingError -> 1.
"""


class ShapeError(ValueError):
    """Input dimensions do not match the declared architecture."""


class StateError(RuntimeError):
    """Operation invoked without the required cached state."""


class NumericError(FloatingPointError):
    """Non-finite values or a numerical routine that failed to converge."""


class FormatError(ValueError):
    """Malformed on-disk artifact (bad magic, truncation, checksum, ...)."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class TrainingError(RuntimeError):
    """Optimization diverged or aborted."""
