"""Error types raised by the pouring pipeline.

Every failure mode that callers are expected to handle gets its own class so
that batch drivers and the service layer can map them to exit codes / HTTP
status without string matching.
"""


class PourError(Exception):
    """Base class for all pipeline errors."""


class DegenerateInput(PourError):
    """Input geometry cannot support the requested fit (too few / collinear points)."""


class NoModelFound(PourError):
    """RANSAC failed to find a model meeting the inlier-ratio threshold."""


class NoLiquidVisible(PourError):
    """No point-cloud points fall inside the liquid search region."""


class InvalidRefractiveIndex(PourError):
    """Refractive index must exceed 1 for a transparent liquid."""


class InvalidDt(PourError):
    """Non-positive time step passed to the tracker."""


class NonMonotonicTimestamp(PourError):
    """Measurement timestamps must be strictly increasing."""


class InvalidTarget(PourError):
    """Target height is non-positive or exceeds the cup height."""


class TrialTimeout(PourError):
    """Closed-loop trial did not reach the Done phase within the time budget."""


class ParseError(PourError):
    """Malformed point-cloud, scenario, or plan file."""
