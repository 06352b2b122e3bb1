"""Exception hierarchy shared across the package."""


class NetkalmanError(Exception):
    """Base class for all package errors."""


class StructureError(NetkalmanError):
    """Inputs are structurally malformed (shape or symmetry mismatch)."""


class ParameterError(NetkalmanError):
    """A generation or search parameter is outside its feasible range."""


class GenerationError(NetkalmanError):
    """Random model generation exhausted its retry budget."""


class ModelError(NetkalmanError):
    """Model matrices violate a numerical requirement (e.g. singular R)."""


class SequencingError(NetkalmanError):
    """An operation was invoked before its inputs were computed."""


class ConfigurationError(NetkalmanError):
    """Artifacts fed to a run do not belong together (hash mismatch etc.)."""
