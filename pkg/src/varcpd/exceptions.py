"""Exception hierarchy.

Configuration problems derive from :class:`ConfigError`; numerical problems
derive from :class:`NumericalError`. The command line maps the two families
to exit codes 1 and 2.
"""


class VarCpdError(Exception):
    pass


class ConfigError(VarCpdError, ValueError):
    pass


class NumericalError(VarCpdError, ArithmeticError):
    pass


class SpectralRadiusViolation(NumericalError):
    """Transition matrix has operator norm >= 1."""


class NotSPD(NumericalError):
    """Covariance matrix is not symmetric positive definite."""


class InvalidRank(ConfigError):
    pass


class InfeasibleJump(ConfigError):
    """Requested jump would push a transition matrix past its spectral bound."""


class ShapeMismatch(ConfigError):
    pass


class SvdFailure(NumericalError):
    pass


class ZeroMatrix(NumericalError):
    pass


class DegenerateSplit(ConfigError):
    """A cross-validation window is empty."""


class ConfigInvalid(ConfigError):
    pass


class SolverFailure(NumericalError):
    """An iterative solve did not reach its tolerance where that is fatal."""


class ConvergenceWarning(UserWarning):
    pass


class RankDeficientPredictors(UserWarning):
    pass
