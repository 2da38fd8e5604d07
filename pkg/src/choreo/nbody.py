"""Rotating-frame gravitational n-body system.

n unit-mass bodies sit on a unit circle (a regular polygon), optionally
with a central body of mass mu (the Maxwell configuration).  In a frame
rotating with angular frequency omega = sqrt(mu + s_1) the polygon is an
equilibrium.  Positions are stored as real triples (x, y, z); complex
planar arithmetic is carried out with the symplectic matrix
J = [[0, 1], [-1, 0]], so the equations of motion read

    x_j' = v_j
    v_j' = 2*omega*diag(J,0) v_j + omega^2 (x_j, y_j, 0) + g_j(x)
           + lam1*F1_j + lam2*F2_j + lam3*F3_j

with g_j the per-unit-mass gravitational acceleration and F1, F2, F3 the
generators of z-translation, planar rotation, and the flow direction.
The three lam coefficients are auxiliary unfolding parameters: they make
the periodic boundary-value problem square and vanish at true solutions.

Body indexing: ring body j (1-based, at angle j*zeta) is stored at array
row j-1 for mu = 0, or at row j for mu > 0 where row 0 is the central
body.  The last row is always ring body n, the reference body at angle
n*zeta = 2*pi, i.e. at (1, 0, 0); symmetry and phase conditions are
anchored to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CollisionProximity

#: Evaluation guard: pairwise distances below this raise CollisionProximity
#: (polygon circumradius is 1).  Families that shrink toward a collision are
#: stopped cleanly by the continuation driver instead of producing huge forces.
DELTA_COLLISION = 1e-3

#: Planar symplectic matrix; rotation generator used for the Coriolis term
#: and the rotation unfolding field.
J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def s_coefficient(n: int, k: int) -> float:
    """Lattice sum s_k = (1/4) * sum_{j=1}^{n-1} sin^2(k j zeta/2) / sin^3(j zeta/2).

    s_1 sets the squared frame frequency of the polygonal equilibrium;
    sqrt(s_k) are the vertical oscillation frequencies.  The sum is
    periodic in k and symmetric under k -> n - k.
    """
    if n < 2:
        raise ValueError(f"need at least two bodies, got n={n}")
    zeta = 2.0 * math.pi / n
    j = np.arange(1, n)
    half = 0.5 * j * zeta
    return float(0.25 * np.sum(np.sin(k * half) ** 2 / np.sin(half) ** 3))


@dataclass(frozen=True)
class SystemConfig:
    """Problem definition: body count, central mass, rotating-frame frequency.

    ``frame_freq`` defaults to sqrt(mu + s_1(n)), the unique frequency for
    which the (Maxwell) polygon is an equilibrium; passing any other value
    raises.
    """

    n: int
    mu: float = 0.0
    frame_freq: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"need n >= 3 ring bodies, got {self.n}")
        if self.mu < 0.0:
            raise ValueError(f"central mass must be nonnegative, got {self.mu}")
        ff = math.sqrt(self.mu + s_coefficient(self.n, 1))
        if self.frame_freq is None:
            object.__setattr__(self, "frame_freq", ff)
        elif abs(self.frame_freq**2 - ff**2) > 1e-12 * ff**2:
            raise ValueError(
                f"frame_freq^2 = {self.frame_freq**2!r} inconsistent with "
                f"mu + s_1 = {ff**2!r}"
            )

    @property
    def zeta(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def has_central(self) -> bool:
        return self.mu > 0.0

    @property
    def body_count(self) -> int:
        return self.n + 1 if self.has_central else self.n

    @property
    def dim(self) -> int:
        """Phase-space dimension 6 * body_count."""
        return 6 * self.body_count

    @property
    def reference_index(self) -> int:
        """Array row of ring body n (position angle 2*pi)."""
        return self.body_count - 1

    def masses(self) -> np.ndarray:
        m = np.ones(self.body_count)
        if self.has_central:
            m[0] = self.mu
        return m

    def ring_rows(self) -> np.ndarray:
        """Array rows of ring bodies 1..n, in angle order."""
        off = 1 if self.has_central else 0
        return np.arange(off, off + self.n)


@dataclass
class PhasePoint:
    """Positions and velocities of all bodies at one instant."""

    positions: np.ndarray  # (body_count, 3)
    velocities: np.ndarray  # (body_count, 3)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape or self.positions.shape[1] != 3:
            raise ValueError("positions and velocities must both be (nb, 3)")

    @property
    def body_count(self) -> int:
        return self.positions.shape[0]

    def as_vector(self) -> np.ndarray:
        """Flat state [positions.ravel(), velocities.ravel()], length 6*nb."""
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "PhasePoint":
        y = np.asarray(y, dtype=float)
        if y.size % 6:
            raise ValueError(f"state length {y.size} is not a multiple of 6")
        nb = y.size // 6
        return cls(y[: 3 * nb].reshape(nb, 3).copy(), y[3 * nb :].reshape(nb, 3).copy())

    def min_pairwise_distance(self) -> float:
        d = self.positions[None, :, :] - self.positions[:, None, :]
        r2 = np.einsum("abi,abi->ab", d, d)
        ii = np.arange(self.body_count)
        r2[ii, ii] = np.inf
        return float(np.sqrt(r2.min()))


@dataclass(frozen=True)
class UnfoldingParams:
    """Coefficients of the three unfolding fields; zero on true solutions."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])


ZERO_LAMBDAS = UnfoldingParams()


def polygon_equilibrium(config: SystemConfig) -> PhasePoint:
    """Ring body j at (cos j*zeta, sin j*zeta, 0), central body at the origin.

    A fixed point of :func:`vector_field` with zero unfolding parameters.
    """
    ang = np.arange(1, config.n + 1) * config.zeta
    ring = np.stack([np.cos(ang), np.sin(ang), np.zeros(config.n)], axis=1)
    if config.has_central:
        pos = np.vstack([np.zeros(3), ring])
    else:
        pos = ring
    return PhasePoint(pos, np.zeros_like(pos))


def potential(state: PhasePoint, config: SystemConfig) -> float:
    """Pairwise potential sum_{a<b} m_a m_b / r_ab (positive convention)."""
    m = config.masses()
    pos = state.positions
    v = 0.0
    for a in range(config.body_count):
        for b in range(a + 1, config.body_count):
            v += m[a] * m[b] / np.linalg.norm(pos[b] - pos[a])
    return v


def grad_potential(state: PhasePoint, config: SystemConfig) -> np.ndarray:
    """Gradient of :func:`potential` w.r.t. each body position, shape (nb, 3).

    For unit masses this equals the gravitational acceleration; the central
    body's acceleration is grad/mu.
    """
    m = config.masses()
    pos = state.positions
    g = np.zeros_like(pos)
    for a in range(config.body_count):
        for b in range(config.body_count):
            if a == b:
                continue
            d = pos[b] - pos[a]
            g[a] += m[a] * m[b] * d / np.linalg.norm(d) ** 3
    return g


def _check_collision(state: PhasePoint, collision_radius: float) -> float:
    rmin = state.min_pairwise_distance()
    if collision_radius > 0.0 and rmin < collision_radius:
        raise CollisionProximity(rmin, collision_radius)
    return rmin


def vector_field(
    state: PhasePoint,
    config: SystemConfig,
    lambdas: UnfoldingParams = ZERO_LAMBDAS,
    collision_radius: float = DELTA_COLLISION,
) -> np.ndarray:
    """Augmented rotating-frame equations of motion.

    Returns the flat derivative [dx/dt, dv/dt] of ``state.as_vector()``.
    This is the plain reference implementation; collocation assembly and
    anything evaluated at many points goes through :mod:`choreo.kernels`.
    """
    _check_collision(state, collision_radius)
    m = config.masses()
    pos, vel = state.positions, state.velocities
    acc = grad_potential(state, config) / m[:, None]
    w = config.frame_freq
    acc[:, :2] += w * w * pos[:, :2] + 2.0 * w * vel[:, :2] @ J2.T
    lam = lambdas.as_array()
    if np.any(lam):
        f1, f2, f3 = unfolding_fields(state, config)
        acc += lam[0] * f1 + lam[1] * f2 + lam[2] * f3
    return np.concatenate([vel.ravel(), acc.ravel()])


def unfolding_fields(state: PhasePoint, config: SystemConfig):
    """Generators paired with the unfolding parameters.

    F1: unit z (translation), F2: diag(J,0) x (rotation), F3: v (flow/energy).
    Each has shape (body_count, 3) and lives in the acceleration slots.
    """
    nb = config.body_count
    f1 = np.zeros((nb, 3))
    f1[:, 2] = 1.0
    f2 = np.zeros((nb, 3))
    f2[:, :2] = state.positions[:, :2] @ J2.T
    f3 = state.velocities.copy()
    return f1, f2, f3


def conserved_quantities(state: PhasePoint, config: SystemConfig):
    """Vertical momentum Pz and the angular-momentum-like quantity L.

    Pz = sum_j m_j zdot_j,   L = sum_j m_j (v_j . J u_j - omega |u_j|^2).

    Both are mass-weighted so they stay conserved in the Maxwell case; for
    mu = 0 all masses are 1 and the formulas reduce to the plain sums.
    """
    m = config.masses()
    u = state.positions[:, :2]
    du = state.velocities[:, :2]
    pz = float(np.sum(m * state.velocities[:, 2]))
    ju = u @ J2.T
    l = float(
        np.sum(m * (np.einsum("bi,bi->b", du, ju) - config.frame_freq * np.einsum("bi,bi->b", u, u)))
    )
    return pz, l
