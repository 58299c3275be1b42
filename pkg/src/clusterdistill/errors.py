"""Exception types shared across the package.

The CLI maps these onto exit code 1; argparse usage problems exit with 2.
"""


class ContractError(ValueError):
    """An operation was called with inputs violating its contract."""


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


class FormatError(ValueError):
    """A file exists but is not in a supported format."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (e.g. a zero vector where a direction is needed)."""


class StateError(RuntimeError):
    """An operation was invoked before its required state was established."""


class IntegrityError(RuntimeError):
    """Stored artifact failed its integrity check (hash mismatch, truncation)."""
