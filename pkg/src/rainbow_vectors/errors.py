"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or sensor parameters."""


class DataError(ValueError):
    """Malformed or inconsistent input data.

    ``field`` names the offending field when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
