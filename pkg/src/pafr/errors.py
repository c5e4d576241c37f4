"""Exception types shared across the package."""


class PafrError(Exception):
    """Base class for all package-specific errors."""


class StructureError(PafrError):
    """Graph references a face index that does not exist."""


class ManifoldError(PafrError):
    """An edge does not have two distinct incident faces."""


class SchemaError(PafrError):
    """Declared dimensions or schema versions do not match the data."""


class ParseError(PafrError):
    """Malformed interchange record."""

    def __init__(self, message, part_id=None, byte_offset=None):
        super().__init__(message)
        self.part_id = part_id
        self.byte_offset = byte_offset


class LabelingError(PafrError):
    """Ground-truth labels required but missing."""


class FeatureError(PafrError):
    """Feature computation impossible with the available inputs."""


class EmptyGridError(FeatureError):
    """A face grid contains no valid samples."""


class FitError(PafrError):
    """Model training received unusable input."""


class DegenerateLabelsError(FitError):
    """Training labels contain a single class."""


class FormatError(PafrError):
    """Model file is corrupt or has an unknown version."""


class ContractError(PafrError):
    """A caller violated an interface precondition (e.g. non-partition input)."""
