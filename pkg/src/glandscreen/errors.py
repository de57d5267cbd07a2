"""Exception hierarchy shared across the pipeline."""


class GlandScreenError(Exception):
    """Base class for all domain errors raised by this package."""


class InsufficientTissue(GlandScreenError):
    """Too few pixels exceed the optical-density floor to estimate stains."""


class DegenerateStains(GlandScreenError):
    """The stain basis is numerically rank-deficient (e.g. grayscale input)."""


class EmptyClass(GlandScreenError):
    """A class directory contains no decodable images."""


class UnknownBackbone(GlandScreenError):
    """Requested backbone identifier is not registered."""


class DivergedTraining(GlandScreenError):
    """Training loss became non-finite."""


class NoConvFeatures(GlandScreenError):
    """Selected explanation layer has no spatial extent."""


class DimensionMismatch(GlandScreenError):
    """Array dimensions of two inputs do not agree."""


class LengthMismatch(GlandScreenError):
    """Paired sequences have different lengths."""


class EmptyMatrix(GlandScreenError):
    """Confusion matrix has zero total count."""
