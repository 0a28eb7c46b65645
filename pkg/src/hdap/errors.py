"""Exception types raised across the package."""


class HdapError(Exception):
    """Base class for all package errors."""


class DimensionError(HdapError, ValueError):
    """A vector does not match the dimension it is used against."""


class DomainError(HdapError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(HdapError, ValueError):
    """Invalid configuration values."""


class ModelSpecError(HdapError, ValueError):
    """A model description violates its structural invariants."""


class IngestionError(HdapError, ValueError):
    """A measurement file could not be ingested."""


class InsufficientDataError(HdapError, ValueError):
    """Too few rows to fit a regression model."""
