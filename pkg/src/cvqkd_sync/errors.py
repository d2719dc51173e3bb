"""Exception hierarchy shared by all modules."""


class CvqkdError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameter(CvqkdError, ValueError):
    pass


class InvalidConfig(CvqkdError, ValueError):
    pass


class BandEmpty(CvqkdError):
    """No periodogram bin falls inside the requested band."""


class LayoutMismatch(CvqkdError, ValueError):
    pass


class LengthMismatch(CvqkdError, ValueError):
    pass


class InvalidCalibration(CvqkdError, ValueError):
    pass


class DegenerateWindow(CvqkdError):
    """A phase-estimation sum collapsed to (numerically) zero."""


class SyncFailed(CvqkdError):
    """Frame header not found; the frame is unusable and must be reported."""


class InsufficientSamples(CvqkdError):
    pass


class FilterDivergence(CvqkdError):
    """The phase tracker's innovations left the configured bound too often."""
