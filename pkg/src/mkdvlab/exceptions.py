"""Errors raised by the numerical pipelines."""


class MkdvLabError(Exception):
    """Base class for all package errors."""


class ResolutionError(MkdvLabError):
    """Grid too short to resolve the requested number of Fourier modes."""


class FloquetDegenerateError(MkdvLabError):
    """One-period transfer matrix has no hyperbolic splitting.

    Cannot occur analytically for real potentials and kappa > 0; raised when
    |rho_plus| is indistinguishable from 1, which signals an integration
    failure rather than genuine spectrum.
    """

    def __init__(self, kappa, rho_plus, tol):
        self.kappa = kappa
        self.rho_plus = rho_plus
        self.tol = tol
        super().__init__(
            f"floquet-degenerate: |rho_plus|-1 = {abs(rho_plus) - 1.0:.3e} "
            f"below 10*tol = {10.0 * tol:.3e} at kappa = {kappa}"
        )


class TailNotConvergedError(MkdvLabError):
    """Certified tail bound of the kappa integral exceeds the tolerance."""

    def __init__(self, tail, tol, l_max):
        self.tail = tail
        self.tol = tol
        self.l_max = l_max
        super().__init__(
            f"tail-not-converged: estimated tail {tail:.3e} exceeds "
            f"tol {tol:.3e} at maximum cutoff L = {l_max}"
        )


class QuadratureError(MkdvLabError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, achieved, requested):
        self.achieved = achieved
        self.requested = requested
        super().__init__(
            f"quadrature did not converge: achieved {achieved:.3e}, "
            f"requested {requested:.3e}"
        )


class FlowInstabilityError(MkdvLabError):
    """Time integration lost L^2 conservation beyond the abort threshold."""

    def __init__(self, t, drift):
        self.t = t
        self.drift = drift
        super().__init__(
            f"flow unstable: relative L2 drift {drift:.3e} at t = {t:.6g}"
        )


class MiuraInversionError(MkdvLabError):
    """Newton iteration for the inverse Miura transform did not converge."""

    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"inverse transform did not converge: residual {residual:.3e} "
            f"after {iterations} iterations (with amplitude continuation)"
        )
