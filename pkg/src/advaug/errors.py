"""Exception types shared across the package."""


class AdvAugError(Exception):
    pass


class FormatError(AdvAugError, ValueError):
    """A binary dataset file does not have the expected layout."""


class LengthError(FormatError):
    """A binary dataset file is truncated."""


class ConfigError(AdvAugError, ValueError):
    pass


class DegenerateDataError(AdvAugError, ValueError):
    pass


class SamplingError(AdvAugError, ValueError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class DimensionError(AdvAugError, ValueError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class StateError(AdvAugError, RuntimeError):
    pass


class DivergenceError(AdvAugError, FloatingPointError):
    """Raised when a loss, activation or gradient becomes non-finite."""

    def __init__(self, message, layer=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.step = step
