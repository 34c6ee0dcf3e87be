"""Exception hierarchy shared by the simulator modules."""


class CesarError(Exception):
    pass


class ConfigError(CesarError, ValueError):
    """Invalid configuration value. ``line`` is set when parsed from a file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidRegularity(ConfigError):
    pass


class GenerationFailure(CesarError, RuntimeError):
    pass


class NotNeighbors(CesarError, ValueError):
    pass


class MalformedBitstring(CesarError, ValueError):
    pass


class IndexOutOfRange(CesarError, ValueError):
    pass


class FixedPointOverflow(CesarError, OverflowError):
    pass


class DuplicateNeighborMessage(CesarError, ValueError):
    pass


class UnknownSender(CesarError, ValueError):
    pass


class Unachievable(ConfigError):
    pass
