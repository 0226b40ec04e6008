"""
Exception types raised by shapefit.

Numeric events that are expected during fitting (rays missing the shape,
warps leaving the image, samples outside the grid) are reported as flags,
never through these exceptions.
"""


class ShapeFitError(Exception):
    """Base class for all shapefit errors."""


class DegenerateInputError(ShapeFitError):
    """Input sits on a singularity of the requested operation."""


class BehindCameraError(ShapeFitError):
    """A point or depth is not in front of the camera."""


class ShapeModelError(ShapeFitError):
    """Shape model construction or decoding received inconsistent input."""


class GridFormatError(ShapeFitError):
    """A grid, model or depth file does not follow the binary conventions."""


class BundleParseError(ShapeFitError):
    """A calibration, plane, detection or bundle file could not be parsed."""

    def __init__(self, source, message, line_number=None):
        self.source = str(source)
        self.line_number = line_number
        location = self.source if line_number is None else f"{self.source}:{line_number}"
        super().__init__(f"{location}: {message}")
