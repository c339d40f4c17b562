"""Exception hierarchy shared by all modules."""


class FermiwalkError(Exception):
    """Base class for library errors."""


class ConfigurationError(FermiwalkError, ValueError):
    """Invalid input parameters or configuration."""


class NotUnitaryError(ConfigurationError):
    pass


class NotHermitianError(ConfigurationError):
    pass


class DegenerateCouplingError(ConfigurationError):
    """The coupling has a single spectral value, so the gap is undefined."""


class DegeneracyAmbiguityError(FermiwalkError):
    """Eigenvalue clusters too close to be separated reliably."""


class ClassificationAmbiguityError(FermiwalkError):
    """An eigenvalue modulus sits inside the guard band below the unit circle."""


class BudgetExceededError(FermiwalkError):
    """Path enumeration or combinatorial scan exceeds the configured budget."""


class HypothesisViolationError(FermiwalkError):
    """Input state violates a hypothesis of the long-time convergence result."""


class UnsupportedCouplingError(FermiwalkError):
    """Coupling lacks the second-quantized structure a check requires."""


class InvalidDensityMatrixError(ConfigurationError):
    pass
