"""Exception types shared across the toolkit."""


class GfdetectError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(GfdetectError, ValueError):
    pass


class InvalidInput(GfdetectError, ValueError):
    pass


class DegenerateCovariance(GfdetectError, ValueError):
    """No positive signal eigenvalue is left after noise removal."""


class DegenerateInput(GfdetectError, ValueError):
    pass


class DomainError(GfdetectError, ValueError):
    """Argument outside the domain where 1 + d*lambda > 0."""


class NumericError(GfdetectError, ArithmeticError):
    """Non-finite or otherwise unusable intermediate quantity."""


class NumericDrift(NumericError):
    """Incrementally maintained inverse lost positive-definiteness."""


class MonotonicityError(GfdetectError, AssertionError):
    """Audited objective increased during coordinate descent."""


class SolverError(GfdetectError, RuntimeError):
    """Iterative solver hit its iteration cap.

    The last iterate is kept on ``iterate`` so callers can inspect it.
    """

    def __init__(self, message, iterate=None, stage=None):
        super().__init__(message)
        self.iterate = iterate
        self.stage = stage


class UnscalableProfile(GfdetectError, ValueError):
    pass


class IllConditionedWeight(GfdetectError, ValueError):
    pass


class DegenerateLabels(GfdetectError, ValueError):
    pass


class PlanFormatError(GfdetectError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrialError(GfdetectError, RuntimeError):
    """A Monte-Carlo trial failed; ``stage`` names the pipeline step."""

    def __init__(self, message, trial=None, stage=None):
        super().__init__(message)
        self.trial = trial
        self.stage = stage


class CampaignFailure(GfdetectError, RuntimeError):
    """Too many trials of a campaign failed."""
