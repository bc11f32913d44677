"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError/usage -> 1, DataError -> 2,
NumericError -> 3. Everything else is a bug and propagates.
"""


class SociospecError(Exception):
    """Base class for all package errors."""


class DimensionError(SociospecError):
    """Tensor shapes incompatible for the requested operation."""


class ContractError(SociospecError):
    """Caller violated an operation precondition."""


class ConfigError(SociospecError):
    """Invalid or inconsistent configuration."""


class DataError(SociospecError):
    """Corpus/split content cannot satisfy the request."""


class ParseError(DataError):
    """Malformed record while ingesting an external corpus."""


class SchemaError(DataError):
    """Record parsed but a field value is outside its vocabulary."""


class NumericError(SociospecError):
    """Non-finite value encountered during training (NaN abort)."""
