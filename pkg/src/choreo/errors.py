"""Exception hierarchy shared across the package."""


class ChoreoError(Exception):
    """Base class for all package-specific errors."""


class CollisionProximity(ChoreoError):
    """A state was evaluated with two bodies closer than the collision guard."""

    def __init__(self, min_distance, guard):
        super().__init__(
            f"pairwise distance {min_distance:.3e} below collision guard {guard:.3e}"
        )
        self.min_distance = min_distance
        self.guard = guard


class AmbiguousMode(ChoreoError):
    """Eigenvector wave-number classification fell below the energy threshold."""


class DegenerateMode(ChoreoError):
    """Refused to continue a family from a clustered (non-simple) eigenvalue."""


class NoConvergence(ChoreoError):
    """Newton corrector failed to reach tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularJacobian(ChoreoError):
    """The bordered Jacobian factorization hit an (exactly) singular pivot."""


class StepFailure(ChoreoError):
    """Pseudo-arclength step failed even at the minimum step size."""


class NotBracketed(ChoreoError):
    """No pair of consecutive family members brackets the requested period."""


class PeriodMismatch(ChoreoError):
    """Orbit period does not match the resonance period it is paired with."""


class NotCoprime(ChoreoError):
    """Modular inverse requested for non-coprime arguments."""


class NotChoreography(ChoreoError):
    """The (ell, m) pair fails the divisibility condition; the inertial orbit
    splits into several closed curves (a torus link) instead of one."""

    def __init__(self, n, k, ell, m, curve_count):
        super().__init__(
            f"k*ell - m = {k * ell - m} is not divisible by n = {n}; "
            f"the bodies trace {curve_count} separate closed curves"
        )
        self.curve_count = curve_count


class NotToroidal(ChoreoError):
    """Path does not lie near any torus of revolution; knot typing refused."""


class NullSpaceAmbiguous(ChoreoError):
    """Branch switching found a null space of dimension != 1."""


class StepUnderflow(ChoreoError):
    """The initial-value integrator failed before reaching the end time."""


class FormatError(ChoreoError):
    """A persisted file is malformed or has an unsupported version."""
