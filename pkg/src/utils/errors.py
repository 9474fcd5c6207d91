"""
Error types shared by every service.

Each error carries the process exit code the CLI reports for it:
2 for configuration problems, 3 for numerical failures, 4 for I/O.
"""


class OedmtError(Exception):
    """Base class for all errors raised by this project."""

    exit_code = 1


# ---------------------------------------------------------------------------
# Configuration / input errors (exit 2)
# ---------------------------------------------------------------------------

class ConfigError(OedmtError):
    exit_code = 2


class InvalidExtent(ConfigError):
    pass


class InvalidCardinality(ConfigError):
    pass


class KTooLarge(InvalidCardinality):
    pass


class EmptyCandidates(ConfigError):
    pass


class CombinatorialBlowup(ConfigError):
    pass


class ScenarioForwardMissing(ConfigError):
    pass


class DegenerateGeometry(ConfigError):
    pass


class ManifestParseError(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class NonFiniteSample(ConfigError):
    def __init__(self, station_id, row, message=None):
        self.station_id = station_id
        self.row = row
        super().__init__(
            message or f"Non-finite sample in station {station_id} at row {row}"
        )


class DuplicateStationId(ConfigError):
    pass


# ---------------------------------------------------------------------------
# Numerical errors (exit 3)
# ---------------------------------------------------------------------------

class NumericalError(OedmtError):
    exit_code = 3


class NonSPDPrior(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    pass


class InconsistentInputs(NumericalError):
    pass


# ---------------------------------------------------------------------------
# I/O errors (exit 4)
# ---------------------------------------------------------------------------

class DataIOError(OedmtError):
    exit_code = 4


class ExperimentError(OedmtError):
    """
    Wraps an error raised while running an experiment mode and records where
    it happened. The exit code is inherited from the wrapped error.
    """

    def __init__(self, mode, stage, cause, scenario=None):
        self.mode = mode
        self.stage = stage
        self.scenario = scenario
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', 1)
        where = f"mode={mode} stage={stage}"
        if scenario is not None:
            where += f" scenario={scenario}"
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")


class ZeroSignalWarning(UserWarning):
    """Reference waveform too weak; noise level fell back to the floor."""
