"""Exception types raised across the package."""


class GtmsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GtmsError, ValueError):
    def __init__(self, field, expected, got):
        self.field = field
        self.expected = tuple(expected) if expected is not None else None
        self.got = tuple(got) if got is not None else None
        super().__init__(f"{field}: expected shape {self.expected}, got {self.got}")


class OpenBoundaryViolation(GtmsError, ValueError):
    pass


class ShapeMismatch(GtmsError, ValueError):
    pass


class LengthMismatch(GtmsError, ValueError):
    pass


class NonFinite(GtmsError, ArithmeticError):
    pass


class ZeroDenominator(GtmsError, ZeroDivisionError):
    pass


class AmplitudeTooSmall(GtmsError, ArithmeticError):
    def __init__(self, floor, log_modulus=None):
        self.floor = floor
        self.log_modulus = log_modulus
        super().__init__(f"|psi| below floor {floor:g} (ln|psi| = {log_modulus})")


class TooLarge(GtmsError, ValueError):
    pass


class ZeroState(GtmsError, ValueError):
    pass


class NoConvergence(GtmsError, RuntimeError):
    pass


class NoValidStart(GtmsError, RuntimeError):
    pass


class NegativeMean(GtmsError, ArithmeticError):
    def __init__(self, swap_mean, std_error):
        self.swap_mean = swap_mean
        self.std_error = std_error
        super().__init__(
            f"Re<Swap_A> = {swap_mean.real:.3e} is not positive (stderr {std_error:.3e})"
        )


class InsufficientSamples(GtmsError, ValueError):
    pass


class SingularSystem(GtmsError, ArithmeticError):
    pass


class Diverged(GtmsError, RuntimeError):
    pass


class ConfigError(GtmsError, ValueError):
    pass
