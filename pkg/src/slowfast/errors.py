"""Exception types shared across the package."""


class SlowFastError(Exception):
    """Base class for library errors."""


class AssumptionViolation(SlowFastError):
    def __init__(self, msg, point=None):
        super().__init__(msg if point is None else f"{msg} (at w={point!r})")
        self.point = point


class SingularLinearPart(AssumptionViolation):
    """The fast linearisation is singular or too badly conditioned."""

    def __init__(self, point=None, cond=float("inf")):
        super().__init__(f"singular fast linear part, condition number {cond:.3g}", point)
        self.cond = cond


class NonContraction(SlowFastError):
    """The graph solve did not converge; the error field is too large for the contraction."""

    def __init__(self, contraction_est, iterations, point=None, level=None):
        super().__init__(f"contraction solve failed after {iterations} iterations "
                         f"(contraction estimate {contraction_est:.3g}, level={level}, w={point!r})")
        self.contraction_est = contraction_est
        self.iterations = iterations
        self.point = point
        self.level = level


class StepTooLarge(SlowFastError):
    """Inner solve of the generating-function transform failed."""


class Inapplicable(SlowFastError):
    """A monitor's standing assumption (e.g. positive definite A) fails."""


class DegenerateFrequency(SlowFastError):
    """The slow frequency vanishes, so the period is undefined."""


class ConfigError(SlowFastError):
    def __init__(self, msg, line=None, field=None):
        where = ", ".join(s for s in (f"line {line}" if line else "", f"field {field!r}" if field else "") if s)
        super().__init__(f"{msg} ({where})" if where else msg)
        self.line = line
        self.field = field
