"""Exception hierarchy shared by every gait module."""


class GaitError(Exception):
    """Base class for all errors raised by gait."""


class ShapeError(GaitError, ValueError):
    pass


class NumericalError(GaitError, FloatingPointError):
    """A loss, gradient or tensor became non-finite."""


class TapeError(GaitError, RuntimeError):
    pass


class ConfigError(GaitError, ValueError):
    pass


class CheckpointError(GaitError, IOError):
    pass


class DatasetError(GaitError, ValueError):
    pass


class DegenerateInputError(GaitError, ValueError):
    """Input for which a quantity is undefined (e.g. zero denominator)."""
