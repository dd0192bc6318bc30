"""Exception hierarchy.

Two families matter to callers: `InputError` (bad files, bad configuration,
violated invariants; CLI exit code 2) and `NumericalError` (the data were
well formed but the computation could not proceed; CLI exit code 3).
"""


class WadcError(Exception):
    """Base class for every error raised by the toolkit."""


class InputError(WadcError):
    exit_code = 2


class NumericalError(WadcError):
    exit_code = 3


class CaseFormatError(InputError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ValidationError(InputError):
    pass


class DimensionError(InputError, ValueError):
    pass


class ConfigurationError(InputError):
    pass


class EquilibriumError(NumericalError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class InstabilityError(NumericalError):
    def __init__(self, step, time):
        super().__init__(f"trajectory diverged at step {step} (t = {time:.4f} s)")
        self.step = step
        self.time = time


class InsufficientDataError(NumericalError):
    pass


class StabilityError(NumericalError):
    def __init__(self, eigenvalues):
        listed = ", ".join(f"{complex(ev):.6g}" for ev in eigenvalues)
        super().__init__(f"state matrix is unstable; offending eigenvalues: {listed}")
        self.eigenvalues = list(eigenvalues)


class DegenerateWindowError(NumericalError):
    pass


class NonDiagonalizableError(NumericalError):
    pass


class ConjugationError(NumericalError):
    pass
