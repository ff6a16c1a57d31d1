"""
Exception hierarchy for the lab.

Every failure the lab can report is a LabError. The CLI maps ``exit_code``
straight to the process exit status, so subclasses only override it when the
command-line contract fixes a code.
"""


class LabError(Exception):
    """Base class for all lab failures."""

    exit_code = 1


# landscape

class NonConvergence(LabError):
    """A Newton seed did not converge (non-fatal, the seed is dropped)."""


class DegenerateCritical(LabError):
    """A converged critical point has a singular Hessian."""


class NotDoubleWell(LabError):
    """The landscape is not two minima plus one index-one saddle."""

    exit_code = 2

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = dict(counts or {})


# symbol geometry

class ImaginaryAxisEigenvalue(LabError):
    """Some eigenvalue sits on the imaginary axis."""

    exit_code = 3


class NotAGraph(LabError):
    """An invariant subspace does not project onto the x-space."""


class NoPositiveEpsilon(LabError):
    """No candidate epsilon certifies the escape form."""


class LatticeOverflow(LabError):
    """The lattice enumeration would exceed its entry cap."""


# hypotheses

class Blowup(LabError):
    """A trajectory left the modeled region."""


class HypothesisFails(LabError):
    """A dynamical hypothesis could not be certified."""

    exit_code = 4

    def __init__(self, message, direction=None, report=None):
        super().__init__(message)
        self.direction = direction
        self.report = report


# discrete complex

class GaugeOverflow(LabError):
    """Exponential fitting produced an entry beyond the safe range."""


class DimensionUnsupported(LabError):
    """The complex is only assembled for n <= 3."""


# linear algebra

class Singular(LabError):
    """A pivot fell below the singularity threshold."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NoConvergence(LabError):
    """The dense QR iteration ran out of iterations."""


class NotConverged(LabError):
    """Arnoldi did not converge; ``partial`` holds what was found."""

    exit_code = 5

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ResidualTooLarge(LabError):
    """A kept eigenvalue has a residual above tolerance."""

    exit_code = 5


# spectral lab

class ComplexSplitting(LabError):
    """The splitting eigenvalue came out with a non-negligible imaginary part."""


class BadFit(LabError):
    """The splitting fit is not log-linear enough."""

    exit_code = 6

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class SignViolation(LabError):
    """The interaction coefficients have the wrong relative sign."""


class CurveEscapesQuadraticRegion(LabError):
    """The incoming curve bends away before the cutoff radius."""


# configuration

class ConfigError(LabError):
    """Invalid or malformed run configuration."""

    exit_code = 64

    def __init__(self, message, line=None, col=None):
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)
        self.line = line
        self.col = col
