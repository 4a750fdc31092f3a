"""Exception hierarchy shared by every protorect module."""


class ProtorectError(Exception):
    """Base class; the CLI prints ``<ClassName>: <message>`` on one line."""


class FormatError(ProtorectError):
    """Bad magic, version or header in a feature/checkpoint file."""


class TruncationError(FormatError):
    """Payload shorter than the header promises."""


class DataError(ProtorectError):
    """Non-finite or otherwise invalid numeric content."""


class DegenerateVectorError(ProtorectError):
    """A vector whose L2 norm is below the degeneracy threshold."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CapacityError(ProtorectError):
    """Not enough classes, rows or items to satisfy a request."""


class UndefinedBoundError(ProtorectError):
    """The cosine lower bound is undefined (zero mean energy)."""


class LabelError(ProtorectError):
    """Label outside the valid class range."""


class ShapeError(ProtorectError):
    """Mismatched array lengths or dimensions."""


class TrainingFailure(ProtorectError):
    """Loss became non-finite during optimisation."""
