"""
Exception hierarchy for hyperfill.

Every error kind named by an operation has its own class so callers (and the
scenario runner) can decide what is fatal.
"""


class HyperfillError(Exception):
    """Base class for all hyperfill errors"""


class InvalidArgumentError(HyperfillError, ValueError):
    pass


class ResolutionError(HyperfillError):
    """The finite point set is too coarse for the requested scale"""


class ResourceError(HyperfillError):
    """A configured size cap would be exceeded"""


class DepthError(HyperfillError):
    """The filling is not deep enough for the request"""


class EmptyAnchorError(HyperfillError):
    pass


class MarginError(HyperfillError):
    """A curve sample is covered by no ball once the containment margin is applied"""


class UnreachableError(HyperfillError):
    pass


class ComparabilityViolation(HyperfillError):

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class InvalidRelationError(HyperfillError):
    pass


class PreconditionViolation(HyperfillError):
    pass


class DomainError(HyperfillError, ValueError):
    pass


class IterationLimitError(HyperfillError):
    pass


class ConfigError(HyperfillError):
    pass


class SchemaMismatchError(HyperfillError):
    pass


class InternalError(HyperfillError):
    pass
