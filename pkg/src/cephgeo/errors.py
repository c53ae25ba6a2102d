"""Exception types raised across the package.

Every error that a caller may want to catch programmatically gets its own
class; all inherit from CephGeoError so CLI code can map them to exit
code 1 with a structured payload.
"""


class CephGeoError(Exception):
    """Base class for all cephgeo errors."""


# --- model / manifest ---

class UnknownLandmarkName(CephGeoError):
    pass


class ParseError(CephGeoError):
    pass


class ValidationError(CephGeoError):
    pass


# --- geometry / anchors ---

class DegenerateChord(CephGeoError):
    pass


class DegenerateTriple(CephGeoError):
    pass


class EmptyWindow(CephGeoError):
    pass


# --- priors ---

class MissingPopulationStats(CephGeoError):
    pass


class NoVisibleSamples(CephGeoError):
    pass


# --- heatmaps ---

class AllZeroMap(CephGeoError):
    pass


class ShapeMismatch(CephGeoError):
    pass


# --- zones ---

class EmptyZone(CephGeoError):
    pass


# --- sei ---

class EmptyPointSet(CephGeoError):
    pass


class TooFewPoints(CephGeoError):
    pass


# --- clinical ---

class DegenerateVertex(CephGeoError):
    pass


class MissingLandmark(CephGeoError):
    pass


class UnavailableMeasurement(CephGeoError):
    pass


# --- stats ---

class EmptyGroup(CephGeoError):
    pass


class TooFewValues(CephGeoError):
    pass


class ZeroVariance(CephGeoError):
    pass


class LengthMismatch(CephGeoError):
    pass


class AllZeroDifferences(CephGeoError):
    pass


class DegenerateMarginals(CephGeoError):
    pass
