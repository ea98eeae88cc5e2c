"""Exception types shared across the toolkit.

Plain argument/shape violations raise ValueError; the classes here exist
where callers need to tell failure modes apart (file format vs sample rate,
degenerate data vs bad arguments, ...).
"""


class SireniaError(Exception):
    """Base class for toolkit-specific errors."""


class FormatError(SireniaError):
    """A file or payload does not conform to its declared format."""


class SampleRateError(SireniaError):
    """Audio sample rate differs from the 48 kHz pipeline contract."""

    def __init__(self, observed_hz, expected_hz=48000):
        self.observed_hz = observed_hz
        self.expected_hz = expected_hz
        super().__init__(
            f"sample rate {observed_hz} Hz, pipeline requires {expected_hz} Hz "
            "(resampling is out of scope)"
        )


class StateError(SireniaError):
    """Operation applied to a value in the wrong state (e.g. double normalize)."""


class DegenerateDataError(SireniaError):
    """Data cannot support the requested statistic (zero variance, empty class)."""


class CapacityError(SireniaError):
    """A generator or container cannot hold what was requested."""


class ConsistencyError(SireniaError):
    """Cross-referenced records disagree (e.g. decision for an unknown sample)."""


class NumericError(SireniaError):
    """Non-finite value produced during computation; names the location."""
