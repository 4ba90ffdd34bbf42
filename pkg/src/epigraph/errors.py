"""Exception types shared across the package.

The CLI maps these onto exit codes, so raise the most specific one.
"""


class EpigraphError(Exception):
    """Base class for all package errors."""


class ContractError(EpigraphError):
    """An operation was called outside its stated preconditions."""


class DimensionError(ContractError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(EpigraphError):
    """Invalid configuration value or unknown configuration key."""


class DataQualityError(EpigraphError):
    """Input data violates a quality requirement (gaps, coverage, range)."""


class SchemaError(EpigraphError):
    """Input file does not match its declared schema (header, field types)."""


class NumericError(EpigraphError):
    """Non-finite values where finite ones are required."""


class MissingArtifactError(EpigraphError):
    """A required file (checkpoint, table) does not exist."""
