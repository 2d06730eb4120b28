"""Exceptions raised by the estimation pipeline."""


class EstimationError(RuntimeError):
    """Base class for failures inside a fit, solver or estimator."""


class SingularDesignError(EstimationError):
    """Normal equations are singular (rank-deficient design, no penalty)."""


class SeparationError(EstimationError):
    """Unpenalized binary regression diverged (separable data)."""


class ConvergenceError(EstimationError):
    """Iterative solver stopped before reaching its tolerance.

    Attributes:
        residual: Residual at the last iterate
        iterations: Number of iterations performed
    """

    def __init__(self, message: str, residual: float, iterations: int = 0) -> None:
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class DegenerateShrinkageError(EstimationError):
    """Shrinkage factor too close to zero to divide by."""


class VarianceEstimateError(EstimationError):
    """Plug-in variance came out negative."""


class BaselineFitError(EstimationError):
    """A nuisance fit failed on one cross-fitting fold."""


class ExperimentAbortedError(EstimationError):
    """Too many replicates failed for the experiment to be meaningful.

    Attributes:
        report: Per-method failure counts and sample reasons
    """

    def __init__(self, message: str, report: str) -> None:
        super().__init__(f"{message}\n{report}")
        self.report = report
