"""Exception hierarchy shared across the package."""


class ContactQualityError(Exception):
    """Base class for all package errors."""


class PointFileError(ContactQualityError, ValueError):
    """A point CSV is missing, malformed or semantically invalid."""


class UnsupportedFormatError(ContactQualityError, ValueError):
    """Input file is in a format we do not read (e.g. binary STL)."""


class MeshFormatError(ContactQualityError, ValueError):
    """ASCII STL is syntactically broken (truncated facet, bad token)."""


class GeometryError(ContactQualityError, ValueError):
    """Invalid geometric input (empty sets, non-finite values, bad parameters)."""


class DegenerateGeometryError(GeometryError):
    """Point set is rank deficient for the requested operation."""


class ShapeError(ContactQualityError, ValueError):
    """Tensor shapes are incompatible with a kernel."""


class GenerationError(ContactQualityError):
    """A dataset generation plan cannot produce a valid dataset."""


class WeightsFormatError(ContactQualityError, ValueError):
    """Weights file is corrupt or disagrees with its own config."""


class WeightsVersionError(WeightsFormatError):
    """Weights file carries no version or an unknown one."""
