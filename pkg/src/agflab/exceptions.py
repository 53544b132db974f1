"""Exception hierarchy shared by every agflab module."""


class AgfError(Exception):
    """Base class for all errors raised by agflab."""


class ShapeError(AgfError, ValueError):
    """Operands have incompatible or empty shapes."""


class EvaluationError(AgfError, ArithmeticError):
    """A function evaluation produced a non-finite value."""


class ConfigError(AgfError, ValueError):
    """A model or experiment configuration is invalid."""


class OptionsError(ConfigError):
    """An invalid combination of attention options was requested."""


class FitError(AgfError, ValueError):
    """A curve fit cannot be carried out on the given data."""


class DomainError(FitError):
    """Input data lies outside the domain of the fitted family (e.g. log of a non-positive value)."""


class TrainingError(AgfError, RuntimeError):
    """Training diverged.

    Parameters
    ----------
    message : str
    step : int
        Optimizer step at which the non-finite loss was observed.
    """

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class IngestionError(AgfError, ValueError):
    """A corpus file is unreadable or contains no tokens."""


class EmptyDistributionError(AgfError, ValueError):
    """No (anchor, target) pairs were observed, so no distribution can be normalized."""


class MaskError(AgfError, ValueError):
    """A query row has every key masked out, so its softmax is undefined."""
