"""Exception and warning types shared across the package.

Every error raised by the public API derives from :class:`TubelabError` so
callers can catch the whole family at once.  Names follow the operation
contracts: each operation documents which of these it may raise.
"""


class TubelabError(Exception):
    """Base class for all tubelab errors."""


# --- geometry ---------------------------------------------------------------

class NonOrthonormalAxes(TubelabError):
    """Box axes are not orthonormal within tolerance."""


class NonPositiveExtent(TubelabError):
    """A box extent is zero or negative."""


class RoleMismatch(TubelabError):
    """Declared body role contradicts its extents."""


class GridRequired(TubelabError):
    """Voxel-mode operation called without a grid."""


class DegenerateBox(TubelabError):
    """Box too degenerate for the requested operation."""


class AmbiguousPlane(TubelabError):
    """Ball-like body has no distinguished plane for an angle computation."""


# --- measures ----------------------------------------------------------------

class EmptyFamily(TubelabError):
    """Operation requires a nonempty family."""


class EmptyShading(TubelabError):
    """All shading sets are empty; the requested ratio is undefined."""


class BudgetExceeded(TubelabError):
    """Candidate or voxel count exceeds the configured cap."""


class ZeroBaseDensity(TubelabError):
    """Reference density is zero; the normalized ratio is undefined."""


class GridTooCoarse(TubelabError):
    """Grid resolution cannot resolve the family."""


class UnderResolved(UserWarning):
    """A body is much thinner than one grid cell; its voxelization is unreliable."""


# --- shading / refinement ------------------------------------------------------

class EmptyInput(TubelabError):
    """Pigeonholing called on an empty family or shading."""


class TooFewTubes(TubelabError):
    """Uniformization needs at least a handful of tubes."""


class FrostmanAuditFailed(TubelabError):
    """A per-block spread precondition does not hold."""


class ScaleOffLadder(TubelabError):
    """Requested scale is not on the family's scale ladder."""


class MultiplicityTooLow(TubelabError):
    """Typical-angle search needs overlapping shadings."""


class DensityTooLow(TubelabError):
    """Shading too sparse for the plank reduction pipeline."""


class DegeneratePlanks(TubelabError):
    """Bodies are not genuinely plank-shaped (a << b << 1 fails)."""


# --- randomize -----------------------------------------------------------------

class InvalidMoments(TubelabError):
    """Tail bound called with mean exceeding the a.s. bound."""


class MotionBudgetExceeded(TubelabError):
    """Requested number of random copies exceeds the configured cap."""


class HypothesisAuditFailed(TubelabError):
    """A measured hypothesis of a randomized pipeline does not hold."""


class OverPacked(TubelabError):
    """Construction parameters ask for more bodies than fit."""


class TargetUnreachable(TubelabError):
    """Shading target cannot be met at the grid's granularity."""


# --- diagnostics ----------------------------------------------------------------

class NotUniformized(TubelabError):
    """Angular profile needs a family with a common scale."""


class LadderInvalid(TubelabError):
    """Exponent ladder is not ascending or exceeds its cap."""


class ThetaRequired(TubelabError):
    """Case classification needs an angle for the transverse/tangential split."""


# --- cli -------------------------------------------------------------------------

class ParseError(TubelabError):
    """Scenario file failed to parse."""


class MissingInput(TubelabError):
    """Scenario references an input that does not exist."""


class AssertFailed(TubelabError):
    """A hard audit claim failed during a scenario run."""

    def __init__(self, claim: str, message: str = ""):
        self.claim = claim
        super().__init__(f"{claim}: {message}" if message else claim)
