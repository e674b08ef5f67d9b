"""Exception and warning types shared across the toolkit."""


class KernelBoundsError(Exception):
    """Base class for all errors raised by kernelbounds."""


class ConstraintViolation(KernelBoundsError, ValueError):
    """A parameter set breaks one of the admissibility inequalities.

    The message always names the failed inequality, e.g. ``"s > |m-2|"``.
    """

    def __init__(self, inequality, detail=""):
        self.inequality = inequality
        msg = inequality if not detail else f"{inequality} ({detail})"
        super().__init__(msg)


class NonFinite(KernelBoundsError, ArithmeticError):
    """A ratio or functional evaluated to NaN or infinity at an interior point."""


class WindowError(KernelBoundsError, ValueError):
    """A time window does not fit inside the admissible horizon."""


class StabilityError(KernelBoundsError, RuntimeError):
    """The time stepper produced a negative node value beyond tolerance."""


class TruncationError(KernelBoundsError, RuntimeError):
    """Mass leaked through the truncation boundary beyond tolerance."""


class BlowupError(KernelBoundsError, RuntimeError):
    """A Monte-Carlo path escaped far beyond the truncation radius."""


class QuadratureWarning(UserWarning):
    """Refinement difference of a quadrature exceeds the tolerated level."""


class HeavyTailWarning(UserWarning):
    """A few Monte-Carlo paths dominate the estimate."""


class NegativeRadicandWarning(UserWarning):
    """A subtracted radical in the gradient envelope had a negative radicand."""
