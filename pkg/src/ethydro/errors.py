"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
task failures exit 2, resource-cap violations exit 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad keys, malformed values, unknown presets."""


class TaskError(RuntimeError):
    """A pipeline task failed while executing (numerical or I/O trouble)."""


class CapExceeded(RuntimeError):
    """A declared resource cap (dense dimension, memory budget) was hit."""
