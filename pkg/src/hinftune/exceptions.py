"""Exception types raised by hinftune."""


class HinfTuneError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(HinfTuneError):
    """A numerical procedure failed (maps to CLI exit code 3)."""


class SingularAtFrequency(NumericalError):
    """``jwI - A`` is numerically singular, i.e. a pole lies on or near the grid point."""

    def __init__(self, omega, cond=None):
        self.omega = omega
        self.cond = cond
        msg = f"jwI - A is numerically singular at omega={omega!r} rad/s"
        if cond is not None:
            msg += f" (cond={cond:.3e})"
        super().__init__(msg)


class EigenFailure(NumericalError):
    """Eigenvalue computation did not converge."""


class NotStable(NumericalError):
    """The system is not exponentially stable, so its H-infinity norm is +inf."""


class NotHermitian(HinfTuneError, ValueError):
    """Matrix is not Hermitian within tolerance."""


class SizeCapExceeded(HinfTuneError, ValueError):
    """System too large for the LMI verification oracle."""


class IllPosedLoop(HinfTuneError, ValueError):
    """A block diagram contains a delay-free algebraic loop that cannot be resolved."""


class NonConvergence(NumericalError):
    """Newton iteration did not converge."""


class AlgebraicNewtonFailure(NonConvergence):
    """The network equations could not be solved during a transient simulation."""


class UnmodeledBus(HinfTuneError, ValueError):
    """A dynamic bus has no prosumer model attached."""


class SingularAlgebraicJacobian(NumericalError):
    """The Jacobian of the network equations wrt the algebraic variables is singular."""


class ZeroModeError(NumericalError):
    """The phase-invariance zero eigenmode is missing or not unique."""


class MultipleZeroModes(ZeroModeError):
    """More than one near-zero eigenvalue, e.g. islanded sub-networks."""


class NoZeroMode(ZeroModeError):
    """No near-zero eigenvalue to remove (already reduced?)."""


class InitialUnstable(NumericalError):
    """Tuning was started from a parameter vector that does not stabilize the system."""

    def __init__(self, eigenvalues, message=None):
        self.eigenvalues = eigenvalues
        if message is None:
            bad = [complex(e) for e in eigenvalues]
            message = f"initial parameters do not stabilize the system; offending eigenvalues: {bad}"
        super().__init__(message)


class NoProgress(NumericalError):
    """The tuner rejected many consecutive iterations with a vanishing trust region."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class NoSteadyState(NumericalError):
    """A trajectory did not settle, so step-response metrics are undefined."""


class ConfigError(HinfTuneError, ValueError):
    """Invalid configuration file (maps to CLI exit code 2)."""
