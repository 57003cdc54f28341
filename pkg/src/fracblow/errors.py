"""Exception types raised across the package."""


class FracBlowError(Exception):
    """Base class for all package errors."""


class GridError(FracBlowError, ValueError):
    pass


class ParamError(FracBlowError, ValueError):
    pass


class TailMassEscape(FracBlowError):
    """Too much mass near the edge of the periodic box for a faithful rescale."""

    def __init__(self, fraction: float, threshold: float):
        self.fraction = fraction
        self.threshold = threshold
        super().__init__(
            f"tail mass fraction {fraction:.3e} exceeds threshold {threshold:.1e}"
        )


class NonConvergence(FracBlowError):
    pass


class DivergedIterate(FracBlowError):
    pass


class Diverged(FracBlowError):
    pass


class StepUnderflow(FracBlowError):
    def __init__(self, dt: float, dt_min: float):
        self.dt = dt
        self.dt_min = dt_min
        super().__init__(f"time step {dt:.3e} fell below dt_min={dt_min:.1e}")


class FitFailed(FracBlowError):
    pass


class QRange(FracBlowError, ValueError):
    pass


class WrapCollision(FracBlowError, ValueError):
    pass


class ConfigError(FracBlowError):
    """Collects every problem found in a config file, not just the first."""

    def __init__(self, problems: list):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


class HypothesisViolation(FracBlowError):
    """Run parameters fall outside the range where concentration is known to hold, and the config made that fatal."""
