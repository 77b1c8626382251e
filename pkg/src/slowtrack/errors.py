"""Exception types shared across the package."""


class DataError(Exception):
    """Invalid or inconsistent input data (bad file contents, empty sets)."""


class PgmFormatError(DataError):
    """Malformed PGM file; the message names the byte offset of the fault."""


class ModelFormatError(DataError):
    """Malformed model file; the message names the offending field or offset."""


class OptimizationError(Exception):
    """The optimizer could not produce a usable result."""


class LineSearchError(OptimizationError):
    """No step satisfying the strong Wolfe conditions was found.

    Carries the best point seen so callers can still make use of it.
    """

    def __init__(self, message, alpha, x, value, gradient):
        super().__init__(message)
        self.alpha = alpha
        self.x = x
        self.value = value
        self.gradient = gradient


class CandidateRejectedError(Exception):
    """Candidate box lies (mostly) outside the frame; caller assigns weight 0."""


class TrackingLostError(Exception):
    """Every candidate was rejected; carries the frame index and last state."""

    def __init__(self, frame_index, state, boxes=None):
        super().__init__(f"tracking lost at frame {frame_index}")
        self.frame_index = frame_index
        self.state = state
        self.boxes = boxes
