"""Exception types raised across the package."""


class InnReachError(Exception):
    """Base class for all package errors."""


class DimensionError(InnReachError, ValueError):
    pass


class ConvergenceError(InnReachError, RuntimeError):
    """An iterative routine did not reach its tolerance."""


class MaxIterExceeded(ConvergenceError):
    pass


class NoCertificate(InnReachError):
    """No weight vector certifies ``mu(W) < 1``; the network may be ill-posed."""

    def __init__(self, mu, message=None):
        self.mu = float(mu)
        if message is None:
            message = (
                f"no well-posedness certificate: minimized weighted matrix "
                f"measure of W is {self.mu:.6g} (requires < 1)"
            )
        super().__init__(message)


class InputBoxInvalid(InnReachError, ValueError):
    """Lower bound exceeds upper bound somewhere in an input box."""


class SpectralRadiusTooLarge(InnReachError):
    def __init__(self, rho):
        self.rho = float(rho)
        super().__init__(
            f"rho(|W|) = {self.rho:.6g} >= 1; the infinite-depth interval "
            "iteration is not guaranteed to converge"
        )


class ModelFormatError(InnReachError, ValueError):
    """Malformed, inconsistent or unsupported model file."""


class TrainingDiverged(InnReachError, RuntimeError):
    def __init__(self, epoch, history):
        self.epoch = epoch
        self.history = history
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
