import logging


logger = logging.getLogger('engawa.core')


class EngawaError(Exception):
    pass


class NotApplicable(EngawaError):
    """The operation is not defined for the current configuration."""
    pass


class NumericError(EngawaError):
    """Base class for failures raised while evaluating or integrating the dynamics."""
    pass


class ConfigError(EngawaError):
    """The run configuration is invalid."""
    pass
