"""Exception types. Each carries a short ``category`` used by the CLI error line."""


class KinetrackError(Exception):
    category = "error"


class DegenerateCalibration(KinetrackError):
    category = "calibration"


class DimensionMismatch(KinetrackError):
    category = "motion"


class FlatPatch(KinetrackError):
    category = "features"


class InsufficientOverlap(KinetrackError):
    category = "clustering"


class NotComparable(KinetrackError):
    """Perspective denominator too close to zero for a meaningful comparison."""

    category = "clustering"


class InvalidScenario(KinetrackError):
    category = "synth"


class MissingInput(KinetrackError):
    category = "input"


class UnreadableFrame(KinetrackError):
    category = "input"

    def __init__(self, index, path, reason=""):
        self.index = index
        self.path = path
        super().__init__(f"frame {index} ({path}) unreadable: {reason}".rstrip(": "))


class ConfigError(KinetrackError):
    category = "config"


class SchemaMismatch(KinetrackError):
    category = "metrics"
