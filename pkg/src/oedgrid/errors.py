"""Exception types raised by the numerical routines and the case parser."""


class OedGridError(Exception):
    """Base class for all package errors."""


class NumericalError(OedGridError):
    """A numerical routine failed; the CLI maps these to exit code 2."""


class NonConvergence(NumericalError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularJacobian(NumericalError):
    """The power-flow Jacobian could not be factorized at the requested point."""


class SingularKktSystem(NumericalError):
    """The Gauss-Newton KKT matrix is singular (locally unidentifiable parameters)."""


class InfeasibleStart(NumericalError):
    """The design problem was started from a point that violates its constraints."""


class CaseFormatError(OedGridError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingBlock(CaseFormatError):
    pass


class MalformedRow(CaseFormatError):
    pass


class UnsupportedFeature(CaseFormatError):
    pass


class ZeroImpedance(CaseFormatError):
    pass
