"""Exception types shared across the package.

Each maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class ConfigError(Exception):
    """Bad or missing configuration: unknown keys, invalid values, absent files."""


class DataError(Exception):
    """Input data violates a precondition (bad values, empty tables, unknown columns)."""


class EmptyPoolError(Exception):
    """Candidate-rule screening left no rules to search over."""


class NumericalError(Exception):
    """A numeric routine produced a non-finite value it cannot recover from."""
