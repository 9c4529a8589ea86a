"""Exception types shared across the package."""


class ViewLabError(Exception):
    """Base class for all package-specific errors."""


class DegenerateBounds(ViewLabError):
    """A viewpoint interval has zero or negative width on some axis."""


class NonFiniteInput(ViewLabError):
    """An input contained NaN or infinity."""


class OutOfBounds(ViewLabError):
    """A viewpoint coordinate sits at or beyond its interval endpoints."""


class ShapeMismatch(ViewLabError):
    """An array shape is incompatible with the classifier architecture."""


class LabelOutOfRange(ViewLabError):
    """A class label lies outside {0, ..., C-1}."""


class DegenerateWeight(ViewLabError):
    """A mixture weight fell below the supported floor."""
