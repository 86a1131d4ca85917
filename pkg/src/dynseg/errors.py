"""Exception types raised across the toolkit."""


class DynsegError(Exception):
    """Base class for all toolkit errors."""


class MissingDepth(DynsegError):
    pass


class UntrustedDepth(DynsegError):
    pass


class DegenerateInput(DynsegError):
    pass


class MissingPoint(DynsegError):
    pass


class DuplicateKeyframe(DynsegError):
    pass


class InsufficientMatches(DynsegError):
    pass


class NoConsensus(DynsegError):
    pass


class Degenerate(DynsegError):
    pass


class TrackingLost(DynsegError):
    pass


class BehindCamera(DynsegError):
    pass


class ConfigError(DynsegError):
    pass


class ParseError(DynsegError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BadQuaternion(ParseError):
    pass


class NoAssociation(DynsegError):
    pass


class EmptyInput(DynsegError):
    pass
