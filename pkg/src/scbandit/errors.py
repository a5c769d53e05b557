class ConstraintViolation(ValueError):
    """A sequence, parameter set or survival curve broke a model constraint."""


class DegenerateScore(ArithmeticError):
    """Score denominator vanished (p == 0 and u == 0)."""


class OracleSizeError(ValueError):
    """Catalog too large for exhaustive enumeration."""


class EstimationError(RuntimeError):
    """Quasi-MLE or SPD solve produced non-finite values."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
