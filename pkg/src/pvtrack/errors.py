"""Exception hierarchy shared by every pvtrack module."""


class PVTrackError(Exception):
    """Base class; the CLI maps any subclass to a machine-readable error."""


class InvalidThresholds(PVTrackError, ValueError):
    pass


class NearVerticalLine(PVTrackError, ValueError):
    """Line runs perpendicular to the flight direction (x^C nearly constant)."""


class SingularObservation(PVTrackError, ArithmeticError):
    pass


class FrameMismatch(PVTrackError, ValueError):
    """A line expressed in one frame was passed where another frame is required."""


class DegenerateRegion(PVTrackError, ValueError):
    pass


class NoIntersection(PVTrackError, ValueError):
    pass


class ShapeMismatch(PVTrackError, ValueError):
    pass


class NoRegionsDetected(PVTrackError, RuntimeError):
    pass


class MalformedMission(PVTrackError, ValueError):
    def __init__(self, rule, message):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


class EmptyWindow(PVTrackError, ValueError):
    pass


class ConfigError(PVTrackError, ValueError):
    pass
