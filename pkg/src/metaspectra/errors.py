"""Typed exceptions shared across the toolkit.

Every failure mode that callers are expected to branch on gets its own
class; anything else raises plain ValueError at the point of offense.
"""


class MetaspectraError(Exception):
    """Base class for all toolkit-specific errors."""


# domain / cube validation
class NegativeRadiance(MetaspectraError):
    pass


class BandMismatch(MetaspectraError):
    pass


class NonFinite(MetaspectraError):
    pass


class OutOfBand(MetaspectraError):
    pass


# metasurface
class AliasedProfile(MetaspectraError):
    pass


class NonPeriodic(MetaspectraError):
    pass


class ShapeMismatch(MetaspectraError):
    pass


class WrongChannelCount(MetaspectraError):
    pass


class EmptyLibrary(MetaspectraError):
    pass


class DesignWavelengthMissing(MetaspectraError):
    pass


# propagation
class UndersampledField(MetaspectraError):
    pass


class EmptyPlane(MetaspectraError):
    pass


# renderer
class GridMismatch(MetaspectraError):
    pass


# calibration
class DegenerateConfiguration(MetaspectraError):
    pass


class TooFewPoints(MetaspectraError):
    pass


class SingularHomography(MetaspectraError):
    pass


class ZeroReference(MetaspectraError):
    pass


# reconstruction
class ZeroPSF(MetaspectraError):
    pass


class AllSaturated(MetaspectraError):
    pass


# metrics
class ImageTooSmall(MetaspectraError):
    pass


class EmptyDataset(MetaspectraError):
    pass


class UnreadableCube(MetaspectraError):
    pass


# io
class BadMagic(MetaspectraError):
    pass


class TruncatedFile(MetaspectraError):
    pass


class SizeMismatch(MetaspectraError):
    pass


class ConfigError(MetaspectraError):
    """Schema violation in a run-configuration document."""
