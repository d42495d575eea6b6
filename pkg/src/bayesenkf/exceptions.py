"""Exception hierarchy shared by all modules."""


class BayesEnKFError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(BayesEnKFError, ValueError):
    pass


class DomainError(BayesEnKFError, ValueError):
    pass


class NumericError(BayesEnKFError, ArithmeticError):
    pass


class ModelError(BayesEnKFError):
    pass


class ConfigError(BayesEnKFError, ValueError):
    pass


class InsufficientEnsembleError(BayesEnKFError, ValueError):
    pass


class ConditioningError(BayesEnKFError, ArithmeticError):
    """A covariance matrix could not be factorized even after jitter."""

    def __init__(self, message, min_eigenvalue=None):
        if min_eigenvalue is not None:
            message = f"{message} (smallest eigenvalue {min_eigenvalue:.3e})"
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class DegeneratePosteriorError(BayesEnKFError, ArithmeticError):
    pass


class OptimizationError(BayesEnKFError):
    def __init__(self, message, best_x=None, best_value=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_value = best_value


class CurvatureError(BayesEnKFError, ArithmeticError):
    pass


class SupportMismatchError(BayesEnKFError):
    pass


class DegeneracyError(BayesEnKFError, ArithmeticError):
    def __init__(self, message, ess=None):
        if ess is not None:
            message = f"{message} (effective sample size {ess:.3g})"
        super().__init__(message)
        self.ess = ess


class StepError(BayesEnKFError):
    """An assimilation step failed; ``stage`` names the failing sub-step."""

    def __init__(self, t, stage, cause):
        super().__init__(f"assimilation failed at t={t} in stage '{stage}': {cause}")
        self.t = t
        self.stage = stage
        self.cause = cause


class ParseError(BayesEnKFError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} at {', '.join(loc)}"
        super().__init__(message)
        self.row = row
        self.column = column
