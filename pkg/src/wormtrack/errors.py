"""Exception types shared across the toolkit."""


class WormtrackError(Exception):
    """Base class for all toolkit errors."""


# geometry ------------------------------------------------------------------

class TooFewPairs(WormtrackError):
    """Fewer than four seam-cell pairs; a cubic spline fit is underdetermined."""


class DuplicateKnot(WormtrackError):
    """Two consecutive midpoint control points coincide."""


class OutOfRange(WormtrackError):
    """Arc-length query outside [0, total length]."""


# assignment ----------------------------------------------------------------

class NonFiniteInput(WormtrackError):
    """NaN or infinite coordinates where finite values are required."""


class InfeasibleConstraints(WormtrackError):
    """Pinned/forbidden constraint set admits no assignment."""


# graphs --------------------------------------------------------------------

class DegenerateInput(WormtrackError):
    """Point set unsuitable for 3D tetrahedralization (coplanar, collinear, < 4 points)."""


class IndexMismatch(WormtrackError):
    """Assignment indices do not match graph vertex ranges."""


# tracking ------------------------------------------------------------------

class MissingCorrespondence(WormtrackError):
    """Displacement decomposition requires a known identity correspondence."""


# synth ---------------------------------------------------------------------

class InfeasibleConfig(WormtrackError):
    """Synthetic-embryo configuration cannot be realized (e.g. nuclei do not fit)."""


# io ------------------------------------------------------------------------

class ParseError(WormtrackError):
    """Malformed file content; message names the line (and field) at fault."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class UnitMismatch(ParseError):
    """Header lacks the required `_um` unit suffixes."""


class ValidationError(WormtrackError):
    """Well-formed input that violates a domain invariant."""


class ConfigError(WormtrackError):
    """Bad configuration file; message names the offending key path."""


# service -------------------------------------------------------------------

class NotFound(WormtrackError):
    """Unknown session or resource."""


class Conflict(WormtrackError):
    """Optimistic revision check failed."""


class FrameCommitted(WormtrackError):
    """Attempted to edit a frame that is already committed."""


class IndexOutOfRange(WormtrackError):
    """Detection index beyond the working list."""


class UncoveredDetections(WormtrackError):
    """Commit refused while unnamed new detections remain."""
