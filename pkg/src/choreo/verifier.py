"""Independent cross-checks on computed orbits.

The initial-value oracle integrates the plain (zero-unfolding) equations
of motion with a high-order adaptive Runge-Kutta scheme, completely
independent of the collocation discretization, and is used to confirm
periodicity and conservation.  The symmetry checks evaluate the
traveling-wave, reversal, vertical-wave, half-period-flip and axial
reflection identities on the orbit's own interpolant; time shifts are
exact rationals of the unit period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .bvp import OrbitSolution
from .choreography import rotation
from .errors import CollisionProximity, StepUnderflow
from .nbody import (
    DELTA_COLLISION,
    PhasePoint,
    SystemConfig,
    conserved_quantities,
    unfolding_fields,
    vector_field,
)


@dataclass
class Trajectory:
    """Dense-output IVP solution with conserved-quantity diagnostics."""

    config: SystemConfig
    duration: float
    _sol: object

    def at(self, t) -> np.ndarray:
        """States at times t, shape (len(t), 6 nb)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._sol(t).T

    def conserved_drift(self, samples: int = 200) -> tuple[float, float]:
        """Largest relative drift of (Pz, L) over the trajectory."""
        ts = np.linspace(0.0, self.duration, samples)
        states = self.at(ts)
        pz = np.empty(samples)
        ang = np.empty(samples)
        for i, y in enumerate(states):
            pz[i], ang[i] = conserved_quantities(
                PhasePoint.from_vector(y), self.config
            )
        scale_p = max(1.0, abs(pz[0]))
        scale_l = max(1.0, abs(ang[0]))
        return (
            float(np.abs(pz - pz[0]).max() / scale_p),
            float(np.abs(ang - ang[0]).max() / scale_l),
        )


def integrate(
    state: PhasePoint,
    config: SystemConfig,
    duration: float,
    tol: float = 1e-12,
    collision_radius: float = DELTA_COLLISION,
) -> Trajectory:
    """Adaptive 8th-order explicit integration with dense output.

    Stops with CollisionProximity when two bodies come within the guard
    radius, and StepUnderflow when the integrator gives up.
    """
    nb = config.body_count

    def rhs(t, y):
        return vector_field(
            PhasePoint.from_vector(y), config, collision_radius=0.0
        )

    def too_close(t, y):
        return PhasePoint.from_vector(y).min_pairwise_distance() - collision_radius

    too_close.terminal = True
    too_close.direction = -1

    sol = solve_ivp(
        rhs,
        (0.0, duration),
        state.as_vector(),
        method="DOP853",
        rtol=tol,
        atol=tol,
        dense_output=True,
        events=too_close,
    )
    if sol.status == 1:
        y_end = sol.y_events[0][0]
        raise CollisionProximity(
            PhasePoint.from_vector(y_end).min_pairwise_distance(), collision_radius
        )
    if not sol.success:
        raise StepUnderflow(sol.message)
    return Trajectory(config, duration, sol.sol)


def return_map_residual(orbit: OrbitSolution, tol: float = 1e-12) -> float:
    """Max-norm gap between the IVP flow over one period and the start state."""
    y0 = orbit.evaluate(0.0)
    traj = integrate(
        PhasePoint.from_vector(y0), orbit.config, orbit.period, tol=tol
    )
    return float(np.abs(traj.at(orbit.period)[0] - y0).max())


def _sample_ring(orbit: OrbitSolution, samples: int):
    """(u, z) samples of every ring body on a uniform phase grid."""
    cfg = orbit.config
    ts = np.arange(samples) / samples
    states = orbit.evaluate(ts)
    nb = cfg.body_count
    pos = states[:, : 3 * nb].reshape(samples, nb, 3)
    rows = cfg.ring_rows()
    return ts, pos[:, rows, :2], pos[:, rows, 2]


def _shift_eval(orbit: OrbitSolution, ts: np.ndarray, shift: float) -> np.ndarray:
    return orbit.evaluate(ts + shift)


@dataclass
class SymmetryReport:
    traveling_wave: float
    reversal: float
    vertical_wave: float | None
    half_period_flip: float | None
    axial_reflection: float | None
    z_alternation: float | None

    def as_dict(self) -> dict:
        return {
            "traveling_wave": self.traveling_wave,
            "reversal": self.reversal,
            "vertical_wave": self.vertical_wave,
            "half_period_flip": self.half_period_flip,
            "axial_reflection": self.axial_reflection,
            "z_alternation": self.z_alternation,
        }


def _phase_fit_reversal(c: np.ndarray, odd_z: np.ndarray | None = None):
    """Best residual of u(t0+s) = e^{2 i phi} conj(u(t0-s)) over anchors t0.

    c holds complex planar samples of the reference body on a uniform
    grid of S points.  A reversal anchor pairs samples p and q with
    p + q = 2*t0, so sweeping the residue rho = (p + q) mod S covers
    every anchor that maps the lattice to itself; for each rho the
    optimal frame rotation e^{2 i phi} has a closed least-squares form.
    With ``odd_z`` given, z(t0+s) = -z(t0-s) is required at the same
    anchor (the (-y,-z) reflection of axial orbits composed with
    reversal).
    """
    S = c.size
    p = np.arange(S)
    best = np.inf
    for rho in range(S):
        b = c[(rho - p) % S]
        corr = np.sum(c * b)
        mag = abs(corr)
        if mag == 0.0:
            continue
        w = corr / mag
        resid = float(np.abs(c - w * np.conj(b)).max())
        if odd_z is not None:
            bz = odd_z[(rho - p) % S]
            resid = max(resid, float(np.abs(odd_z + bz).max()))
        if resid < best:
            best = resid
    return best


def symmetry_residuals(orbit: OrbitSolution, samples: int = 256) -> SymmetryReport:
    """Residuals of the family-defining symmetries on the interpolant.

    traveling_wave : u_j(t) = R(j zeta) u_n(t + j k / n)
    reversal       : u_n(t) = conj(u_n(-t)) up to rotation/time gauge
    vertical_wave  : z_j(t) = z_n(t + j k / n)            (spatial orbits)
    half_period_flip: u_n(t) = u_n(t + 1/2), z_n(t) = -z_n(t + 1/2)
                      (k = n/2 families; broken on axial branches)
    axial_reflection: (-y, -z) reversal symmetry of axial orbits
    z_alternation  : z_j(t) = (-1)^j z_n(t)  (k = n/2: Hip-Hop signature)
    """
    cfg = orbit.config
    n, k = cfg.n, orbit.wave_number
    ts, u, z = _sample_ring(orbit, samples)
    nbrows = cfg.ring_rows()
    nb = cfg.body_count
    spatial = orbit.max_abs_z() > 1e-9

    tw = 0.0
    vw = 0.0
    for idx in range(n):
        j = idx + 1
        shift = (j * k) / n
        shifted = orbit.evaluate(ts + shift)
        ref_row = nbrows[-1]
        u_ref = shifted[:, 3 * ref_row : 3 * ref_row + 2]
        z_ref = shifted[:, 3 * ref_row + 2]
        rot = rotation(j * cfg.zeta)
        tw = max(tw, float(np.abs(u[:, idx, :] - u_ref @ rot.T).max()))
        vw = max(vw, float(np.abs(z[:, idx] - z_ref).max()))

    c = u[:, -1, 0] + 1j * u[:, -1, 1]
    reversal = _phase_fit_reversal(c)

    flip = None
    if n % 2 == 0 and k % n == n // 2:
        half = orbit.evaluate(ts + 0.5)
        ref_row = nbrows[-1]
        u_half = half[:, 3 * ref_row : 3 * ref_row + 2]
        z_half = half[:, 3 * ref_row + 2]
        flip = float(
            max(
                np.abs(u[:, -1, :] - u_half).max(),
                np.abs(z[:, -1] + z_half).max(),
            )
        )

    axial = _phase_fit_reversal(c, odd_z=z[:, -1]) if spatial else None

    z_alt = None
    if n % 2 == 0 and k % n == n // 2:
        z_alt = 0.0
        for idx in range(n):
            j = idx + 1
            sign = -1.0 if j % 2 else 1.0
            z_alt = max(z_alt, float(np.abs(z[:, idx] - sign * z[:, -1]).max()))

    return SymmetryReport(
        traveling_wave=tw,
        reversal=reversal,
        vertical_wave=vw if spatial else None,
        half_period_flip=flip,
        axial_reflection=axial,
        z_alternation=z_alt,
    )


@dataclass
class UnfoldingReport:
    magnitudes: np.ndarray
    passes: bool
    gram_min: float


def unfolding_check(
    orbit: OrbitSolution, bound: float = 1e-8, samples: int = 64
) -> UnfoldingReport:
    """Assert the unfolding parameters vanish at an accepted solution and
    that the three unfolding fields stay linearly independent along it
    (normalized Gram determinant bounded away from zero)."""
    lam = np.abs(orbit.lambdas)
    ts = np.arange(samples) / samples
    states = orbit.evaluate(ts)
    gram_min = np.inf
    for y in states:
        point = PhasePoint.from_vector(y)
        f1, f2, f3 = unfolding_fields(point, orbit.config)
        fields = np.stack([f1.ravel(), f2.ravel(), f3.ravel()])
        gram = fields @ fields.T
        norms = np.sqrt(np.diag(gram))
        norms[norms == 0.0] = 1.0
        gram_min = min(gram_min, float(np.linalg.det(gram / np.outer(norms, norms))))
    return UnfoldingReport(
        magnitudes=lam, passes=bool(lam.max() <= bound), gram_min=gram_min
    )
