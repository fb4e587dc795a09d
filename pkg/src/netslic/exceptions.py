"""Exception hierarchy used across the package."""


class SlicError(Exception):
    """Base class for all errors raised by netslic."""


class TopologyError(SlicError):
    """Branch or bus not found, or the tree is not connected."""


class InputError(SlicError, ValueError):
    """Malformed measurements or configuration."""


class GenerationError(SlicError):
    """Snapshot generation failed (singular network)."""


class NumericDomainError(SlicError, ArithmeticError):
    """A quantity needed as a divisor is (numerically) zero."""


class IllConditionedError(SlicError):
    """A least-squares system is rank deficient.

    Parameters
    ----------
    message : str
    bus : hashable, optional
        Bus at which the ill-conditioned system was assembled.
    cond : float, optional
        Estimated condition number.
    """

    def __init__(self, message, bus=None, cond=None):
        super().__init__(message)
        self.bus = bus
        self.cond = cond


class ConvergenceError(SlicError):
    """An iterative solver stopped without meeting its tolerances.

    ``history`` holds the objective value at every accepted iterate.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConstraintError(SlicError):
    """Equality constraint is rank deficient."""


class PipelineError(SlicError):
    """Pipeline could not estimate every branch.

    ``partial`` maps branches to estimates that did succeed and
    ``failures`` maps branches to the exception that stopped them.
    """

    def __init__(self, message, partial=None, failures=None):
        super().__init__(message)
        self.partial = dict(partial or {})
        self.failures = dict(failures or {})


class MetricError(SlicError, ValueError):
    """Metric is undefined for the given inputs."""


class TrialError(SlicError):
    """One Monte-Carlo trial failed; ``trial`` and ``seed`` identify it."""

    def __init__(self, message, trial=None, seed=None):
        super().__init__(message)
        self.trial = trial
        self.seed = seed


class ObservabilityError(SlicError):
    """The state-estimation model does not have full column rank."""
