"""Exception hierarchy shared across the package."""


class PrefMpcError(Exception):
    """Base class for all errors raised by this package."""


class ConstraintViolationError(PrefMpcError):
    """A controller emitted an input outside the admissible box."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SolverConvergenceError(PrefMpcError):
    """The box-QP solver did not reach the requested residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TrainingError(PrefMpcError):
    """Surrogate training hit a non-finite objective or diverged."""


class ModelSelectionError(PrefMpcError):
    """Every candidate was disqualified during model selection."""


class InvalidQueryError(PrefMpcError):
    """A preference query violates the shared-initial-state rule."""


class QueryTimeoutError(PrefMpcError):
    """No label arrived for a pending query within the timeout."""


class DuplicateQueryError(PrefMpcError):
    """A query id was enqueued twice."""


class UnknownQueryError(PrefMpcError):
    """A label was posted for an id that is not pending."""


class LabelConflictError(PrefMpcError):
    """A label was posted for an id that is already answered."""


class PoolExhaustedError(PrefMpcError):
    """The unlabeled pool holds fewer pairs than the requested batch."""


class IterationError(PrefMpcError):
    """A query-synthesis iteration failed while generating trajectories."""

    def __init__(self, message, provenance=None):
        super().__init__(message)
        self.provenance = provenance or {}


class GenerationError(PrefMpcError):
    """Initial asset generation failed for a controller/seed combination."""


class LoopAbortedError(PrefMpcError):
    """The AL loop stopped early; carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
