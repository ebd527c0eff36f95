"""Exception hierarchy shared across the package."""


class RpmHmmError(Exception):
    """Base class for every error raised by rpmhmm."""


class InvalidInputError(RpmHmmError, ValueError):
    pass


class AlphabetMismatchError(RpmHmmError, ValueError):
    """A symbol code or alphabet tag does not fit the model/alphabet in use."""


class ModelFormatError(RpmHmmError, ValueError):
    pass


class ProfileError(RpmHmmError, ValueError):
    pass


class InvalidReadingError(RpmHmmError, ValueError):
    pass


class IngestionError(RpmHmmError, ValueError):
    """Raised for malformed log lines, unknown devices or illegal statuses."""


class ExpansionOverflowError(RpmHmmError):
    """An observation window expands into more scalar sequences than allowed."""

    def __init__(self, message, count=None, window_start=None, window_end=None):
        super().__init__(message)
        self.count = count
        self.window_start = window_start
        self.window_end = window_end


class CalibrationError(RpmHmmError, ValueError):
    pass


class ScenarioError(InvalidInputError):
    """A scenario id is unknown or its injection precondition does not hold."""



class ProtocolError(RpmHmmError, ValueError):
    pass


class ConfigError(RpmHmmError, ValueError):
    pass
