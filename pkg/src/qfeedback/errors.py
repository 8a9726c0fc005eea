"""Exception types shared across the toolkit.

Each error names the contract it enforces; messages carry the numbers that
tripped the check so failures are diagnosable from logs alone.
"""


class QFeedbackError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(QFeedbackError):
    """Operands act on different Hilbert-space dimensions."""


class NonNegligibleImaginaryPart(QFeedbackError):
    """A quantity that must be real came out with imaginary part > 1e-8."""


class AsymmetricGrid(QFeedbackError):
    """Operation requires a spatial grid symmetric about zero."""


class GridTooCoarse(QFeedbackError):
    """Spatial grid does not resolve the potential it is asked to carry."""


class TruncationLeak(QFeedbackError):
    """Population reached the edge of a truncated basis (top levels > 1e-4)."""


class StatePositivityViolation(QFeedbackError):
    """Density matrix eigenvalue below the repairable band (< -1e-8)."""


class NonPositiveGamma(QFeedbackError):
    """Measurement strength must be positive for this operation."""


class GridUnderResolved(QFeedbackError):
    """Phase-space grid has fewer than 8 cells per standard deviation."""


class CFLViolation(QFeedbackError):
    """Advection step would move mass further than one cell (|v| dt > dx)."""


class NegativeDensity(QFeedbackError):
    """Grid filter density went negative beyond the clip tolerance."""


class CovarianceBlowup(QFeedbackError):
    """Filter covariance trace exceeded its configured bound."""


class NotStabilizable(QFeedbackError):
    """(A, B) pair has an uncontrollable unstable mode; no stabilizing gain."""


class NoConvergence(QFeedbackError):
    """Iterative solve finished without meeting its residual target."""


class MinimumOnBoundary(QFeedbackError):
    """Scan found its best value at the edge of the search range.

    Carries ``gammas`` and ``costs`` arrays so callers can widen the range.
    """

    def __init__(self, message, gammas=None, costs=None):
        super().__init__(message)
        self.gammas = gammas
        self.costs = costs


class TargetNotReached(QFeedbackError):
    """Some trajectories never hit the requested target before t_final.

    ``n_missed`` counts them.
    """

    def __init__(self, message, n_missed=0):
        super().__init__(message)
        self.n_missed = n_missed


class SegmentTooCoarse(QFeedbackError):
    """Receiver segments carry too much signal (> 0.1 mean photons each)."""


class TrajectoryFailure(QFeedbackError):
    """A stepper raised inside the ensemble runner.

    ``trajectory_index`` identifies the failing trajectory; the original
    exception is chained as ``__cause__``.
    """

    def __init__(self, message, trajectory_index):
        super().__init__(message)
        self.trajectory_index = trajectory_index


class UnknownScenario(QFeedbackError):
    """Config named a scenario that is not in the registry."""


class MissingKey(QFeedbackError):
    """Config is missing a required key."""


class UnknownKey(QFeedbackError):
    """Config contains a key the scenario does not accept."""
