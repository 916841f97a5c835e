"""
Errors - Exception hierarchy shared by the toolkit modules

Every error carries the process exit code the command line maps it to:
1 for configuration problems, 2 for numerical failures, 3 for model
preconditions that do not hold.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class ConfigError(ToolkitError):
    """Invalid or unknown configuration entries"""

    exit_code = 1


class NumericalError(ToolkitError):
    """A numerical routine failed or left its admissible range"""

    exit_code = 2


class ModelError(ToolkitError):
    """A model precondition is violated"""

    exit_code = 3


# Model preconditions

class NonLatticeIncrements(ModelError):
    pass


class BetaOutOfRange(ModelError):
    pass


class TruncationTooSmall(ModelError):
    pass


class EmptyPath(ModelError):
    pass


# Numerical failures

class NonConvergence(NumericalError):
    pass


class TiltOverflow(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


class ResolventDivergent(NumericalError):
    pass


class DegenerateControl(NumericalError):
    pass


class OutOfDualRange(NumericalError):
    """Threshold outside the range of the tabulated derivative"""

    def __init__(self, message: str, c_bar: float = float('nan')):
        super().__init__(message)
        self.c_bar = c_bar


class BudgetExceeded(NumericalError):
    pass


class NonLatticeObservable(NumericalError):
    pass


class ZeroProbability(NumericalError):
    pass


class HorizonExceeded(NumericalError):
    pass
