"""Exception types raised across the package."""


class MultiRegError(Exception):
    """Base class for all package errors."""


class DegenerateInput(MultiRegError, ValueError):
    """Too few weighted pairs, or source points too close to collinear."""


class NoValidCluster(MultiRegError):
    """No initial cluster admits a pose fit."""


class NoClusters(MultiRegError, ValueError):
    """A metric was asked to score a labeling without any clusters."""


class EmptySet(MultiRegError, ValueError):
    pass


class ParseError(MultiRegError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CoverageError(MultiRegError, ValueError):
    """Indices in a label or correspondence file are missing or repeated."""


class TargetUnreachable(UserWarning):
    """Euclidean clustering could not get within 50% of the requested count."""


class FileError(MultiRegError, OSError):
    """An object source file could not be read or parsed."""
