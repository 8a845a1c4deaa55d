"""Exception and warning types raised across the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all library errors."""


class ProjectionError(CalibrationError):
    pass


class BehindCamera(ProjectionError):
    """The point has depth <= 1e-6 m in the camera frame."""


class OutOfFov(ProjectionError):
    """The point lies outside the fisheye lens field of view."""


class GimbalLock(CalibrationError):
    """Pitch is within 1e-6 degrees of +/-90; roll and yaw are not separable."""


class EmptyFootprint(CalibrationError):
    """Fewer than 1% of BEV pixels received a valid sample."""


class InsufficientOverlap(CalibrationError):
    def __init__(self, count: int, minimum: int, pair: tuple[str, str] | None = None):
        self.count = count
        self.minimum = minimum
        self.pair = pair
        where = f" for pair {pair[0]}-{pair[1]}" if pair else ""
        super().__init__(f"common-view mask has {count} px{where}, need at least {minimum}")


class NoTexture(CalibrationError):
    """No pixel in the common view passed the gradient threshold."""


class DegenerateExposure(CalibrationError):
    """Denominator intensity sum of the exposure ratio is (numerically) zero."""


class TooFewValid(CalibrationError):
    """A candidate pose projects too few texture points into the image."""

    def __init__(self, valid: int, total: int, floor: float):
        self.valid = valid
        self.total = total
        self.floor = floor
        super().__init__(f"{valid}/{total} texture points valid, below coverage floor {floor}")


class ConfigError(CalibrationError):
    """Rig configuration failed validation."""


class NoImprovementWarning(UserWarning):
    """A search phase finished without accepting any candidate."""
