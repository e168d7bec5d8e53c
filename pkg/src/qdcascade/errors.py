"""Exception types shared across the package."""


class QDCascadeError(Exception):
    """Base class for all package-specific errors."""


class DomainError(QDCascadeError, ValueError):
    """Argument outside the mathematical domain of a closed-form expression."""


class NonConvergence(QDCascadeError, RuntimeError):
    """An iterative routine exhausted its budget without meeting tolerance."""


class InvalidForm(QDCascadeError, ValueError):
    """Parameters do not describe a valid (positive semidefinite) state."""


class SingularDesign(QDCascadeError, ValueError):
    """Measurement settings do not span the space of two-qubit observables."""


class BinMismatch(QDCascadeError, ValueError):
    """Correlation histograms with incompatible binning were combined."""


class FitFailed(QDCascadeError, RuntimeError):
    """A curve fit did not produce a usable parameter estimate."""
