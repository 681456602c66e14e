"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """Two rasters that must share dimensions do not."""


class CenterOutsideInstance(ValueError):
    """A ray-cast center does not lie on a pixel of the requested instance."""


class DegenerateSegment(ValueError):
    """An instance has no usable pixels for the requested operation."""


class InvalidRange(ValueError):
    """A numeric parameter or interval is outside its allowed bounds."""


class PlacementFailure(RuntimeError):
    """Rejection sampling exhausted its attempt budget.

    Carries the seed of the failing scene so the case can be reproduced.
    """

    def __init__(self, message: str, seed=None):
        super().__init__(message if seed is None else f"{message} (seed={seed})")
        self.seed = seed


class InsufficientPoints(ValueError):
    """Too few, or rank-deficient, points for a conic fit."""


class NonEllipseConic(ValueError):
    """The constrained conic solve produced no valid ellipse."""


class NonFiniteLoss(RuntimeError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
