"""Exception types raised across the lab."""


class LabError(Exception):
    """Base class for all lab errors."""


class DegenerateCritical(LabError):
    pass


class NonPhysicalProfile(LabError):
    pass


class AlphaTooSmall(LabError):
    pass


class CriticalHit(LabError):
    pass


class WindowTooShort(LabError):
    pass


class EmptyInterval(LabError):
    pass


class TargetNotCovered(LabError):
    pass


class BranchExplosion(LabError):
    pass


class BranchObstruction(LabError):
    pass


class NotAdmissible(LabError):
    pass


class InvalidLevel(LabError):
    pass


class NoConvergence(LabError):
    pass


class AllBelowFloor(LabError):
    pass


class TooFewPoints(LabError):
    pass


class SchemaError(LabError):
    """Config validation failure; ``field`` holds the dotted path."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(field if message is None else f"{field}: {message}")
