"""Resonant orbits and their inertial-frame choreographies.

A rotating-frame orbit of frequency nu appears in the inertial frame
composed with the frame rotation; it closes when nu and the frame
frequency are rationally related.  An orbit with period
T = (2 pi / frame_freq) * (ell / m), gcd(ell, m) = 1 and k*ell - m
divisible by n, is a choreography: all n ring bodies traverse one closed
curve of period m*T, visiting it with time shifts j * k_tilde * zeta
where k_tilde = k - r*n*ell_star, r = (k*ell - m)/n, and ell_star is the
inverse of ell modulo m.  The xy-projection winds ell times around its
center and is invariant under rotations by 2 pi / m; the bodies form
n/d groups of regular d-gons with d = gcd(k, n).

For ell, m failing the divisibility condition the bodies trace
n / gcd(n, k*ell - m) separate closed curves (a torus link); that count
is reported as a diagnostic with NotChoreography.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bvp import OrbitSolution
from .errors import NotChoreography, NotCoprime, NotToroidal, PeriodMismatch
from .nbody import SystemConfig


def rotation(theta: float) -> np.ndarray:
    """Counterclockwise planar rotation matrix."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def omega_of(nu: float, k: int, config: SystemConfig) -> float:
    """Inertial-frame rotation index (1/n) * (k * frame_freq / nu - 1).

    Integer values mean the orbit is already a plain choreography; the
    rational value r/m identifies an ell:m resonance.
    """
    if nu <= 0.0:
        raise ValueError("frequency must be positive")
    return (k * config.frame_freq / nu - 1.0) / config.n


def modular_inverse(a: int, m: int) -> int:
    """Inverse of a modulo m in [0, m); m = 1 yields 0."""
    if m < 1:
        raise ValueError("modulus must be positive")
    try:
        return pow(a, -1, m)
    except ValueError as exc:
        raise NotCoprime(f"{a} has no inverse modulo {m}") from exc


@dataclass(frozen=True)
class Resonance:
    """An ell:m resonance certificate for wave number k of an n-gon."""

    ell: int
    m: int
    k: int
    n: int
    T_res: float
    r: int
    k_tilde: int
    d: int

    @classmethod
    def build(cls, ell: int, m: int, k: int, config: SystemConfig) -> "Resonance":
        if ell < 1 or m < 1:
            raise ValueError("ell and m must be positive")
        if math.gcd(ell, m) != 1:
            raise ValueError(f"ell={ell} and m={m} are not coprime")
        n = config.n
        num = k * ell - m
        if num % n:
            raise NotChoreography(n, k, ell, m, n // math.gcd(n, num % n or n))
        r = num // n
        ell_star = modular_inverse(ell % m, m) if m > 1 else 0
        k_tilde = (k - r * n * ell_star) % (n * m)
        return cls(
            ell=ell,
            m=m,
            k=k,
            n=n,
            T_res=(2.0 * math.pi / config.frame_freq) * ell / m,
            r=r,
            k_tilde=k_tilde,
            d=math.gcd(k, n),
        )

    @property
    def choreography_period(self) -> float:
        return self.m * self.T_res


def link_curve_count(n: int, k: int, ell: int, m: int) -> int:
    """Number of separate closed curves traced when k*ell - m is not
    divisible by n (conjectured count n / gcd(n, k*ell - m), validated
    numerically in the test suite)."""
    g = math.gcd(n, (k * ell - m) % n)
    return n // g


def enumerate_resonances(
    config: SystemConfig,
    k: int,
    period_interval: tuple[float, float],
    L_max: int,
) -> list[Resonance]:
    """All ell:m resonances with ell, m <= L_max whose period lies in the
    interval, sorted by period.  Pure integer arithmetic besides T."""
    if L_max < 1:
        raise ValueError("L_max must be >= 1")
    lo, hi = period_interval
    if not lo <= hi:
        raise ValueError("empty period interval")
    out = []
    for ell in range(1, L_max + 1):
        for m in range(1, L_max + 1):
            if math.gcd(ell, m) != 1 or (k * ell - m) % config.n:
                continue
            res = Resonance.build(ell, m, k, config)
            if lo <= res.T_res <= hi:
                out.append(res)
    out.sort(key=lambda r: r.T_res)
    return out


@dataclass
class ChoreographyPath:
    """Reference body's closed inertial-frame curve plus its certificate.

    ``times`` spans one full choreography period m*T_res; ``points`` holds
    (x, y, z) rows (the endpoint, equal to the start up to ``closure_gap``,
    is not duplicated).  ``body_paths`` keeps the inertial samples of every
    body (same time grid) for the symmetry checks, and ``rotating`` the
    original rotating-frame samples.
    """

    times: np.ndarray
    points: np.ndarray
    resonance: Resonance
    source_id: str = ""
    body_paths: np.ndarray | None = None  # (nbodies, S, 3)
    rotating: np.ndarray | None = None  # (nbodies, S, 3)
    closure_gap: float = 0.0


def to_inertial(
    orbit: OrbitSolution, resonance: Resonance, samples_per_period: int = 256
) -> ChoreographyPath:
    """Sample the orbit over m periods and undo the frame rotation.

    q_j(t) = R(frame_freq * t) u_j(t), z unchanged; the rotation is about
    the origin (where the Maxwell central body sits).  Times are uniform
    with samples_per_period points per orbit period, m * samples_per_period
    total; the end point (= start) is not duplicated.
    """
    if abs(orbit.period - resonance.T_res) > 1e-8 * resonance.T_res:
        raise PeriodMismatch(
            f"orbit period {orbit.period!r} vs resonance period {resonance.T_res!r}"
        )
    cfg = orbit.config
    S = samples_per_period * resonance.m
    t_phys = resonance.choreography_period * np.arange(S) / S
    tau = np.arange(S) / samples_per_period  # orbit phases, wrapped by evaluate
    states = orbit.evaluate(tau)
    nb = cfg.body_count
    pos = states[:, : 3 * nb].reshape(S, nb, 3)
    theta = cfg.frame_freq * t_phys
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    inert = np.empty_like(pos)
    inert[:, :, 0] = cos_t[:, None] * pos[:, :, 0] - sin_t[:, None] * pos[:, :, 1]
    inert[:, :, 1] = sin_t[:, None] * pos[:, :, 0] + cos_t[:, None] * pos[:, :, 1]
    inert[:, :, 2] = pos[:, :, 2]
    ref = cfg.reference_index
    # closure gap at t = m*T: the orbit's periodicity defect composed with
    # the (tiny) rotation misclose from |T - T_res|
    end_state = orbit.evaluate(np.array([1.0]))[0][3 * ref : 3 * ref + 3]
    start_state = orbit.evaluate(np.array([0.0]))[0][3 * ref : 3 * ref + 3]
    theta_end = cfg.frame_freq * resonance.choreography_period
    q_end = np.array(
        [
            math.cos(theta_end) * end_state[0] - math.sin(theta_end) * end_state[1],
            math.sin(theta_end) * end_state[0] + math.cos(theta_end) * end_state[1],
            end_state[2],
        ]
    )
    closure_gap = float(np.linalg.norm(q_end - start_state))
    return ChoreographyPath(
        times=t_phys,
        points=inert[:, ref, :].copy(),
        resonance=resonance,
        source_id=f"n{cfg.n}-k{orbit.wave_number}-{orbit.family}",
        body_paths=inert.transpose(1, 0, 2).copy(),
        rotating=pos.transpose(1, 0, 2).copy(),
        closure_gap=closure_gap,
    )


def _circular_shift(samples: np.ndarray, shift_fraction: float) -> np.ndarray:
    """Evaluate periodic samples at t + shift via trigonometric interpolation.

    ``samples`` has time on axis 0; ``shift_fraction`` is in units of the
    full sampled period.
    """
    S = samples.shape[0]
    coef = np.fft.rfft(samples, axis=0)
    freqs = np.arange(coef.shape[0])
    phase = np.exp(2j * math.pi * freqs * shift_fraction)
    shifted = np.fft.irfft(coef * phase.reshape(-1, *([1] * (samples.ndim - 1))), n=S, axis=0)
    return shifted


def winding_number(points_xy: np.ndarray, center: np.ndarray | None = None) -> int:
    """Signed revolutions of a closed sampled curve about its centroid.

    Sums wrapped angle increments around the closed polygon of samples;
    requires sampling fine enough that consecutive increments stay below
    pi, which uniform grids of >= 64 points per winding satisfy easily.
    """
    if center is None:
        center = points_xy.mean(axis=0)
    rel = points_xy - center
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    inc = np.diff(np.concatenate([ang, ang[:1]]))
    inc = (inc + math.pi) % (2.0 * math.pi) - math.pi
    return int(round(float(inc.sum()) / (2.0 * math.pi)))


@dataclass
class SymmetryReport:
    """Residuals certifying the choreography symmetries."""

    closure: float
    same_path: float
    rotation_residual: float
    winding: int
    grouping: float
    per_body_shift: np.ndarray = field(default_factory=lambda: np.empty(0))

    def passes(self, tol: float, expected_winding: int) -> bool:
        return (
            self.closure < tol
            and self.same_path < tol
            and self.rotation_residual < tol
            and self.grouping < tol
            and self.winding == expected_winding
        )


def verify_choreography(path: ChoreographyPath) -> SymmetryReport:
    """Check the defining identities on the sampled path.

    (a) closure of the reference curve over m*T;
    (b) same-path: body j equals the reference body shifted in time by
        j * k_tilde * zeta (fraction j*k_tilde/(n*m) of the full period);
    (c) invariance of the reference curve under rotation by 2*pi*ell/m
        combined with a one-orbit-period time shift;
    (d) winding number about the centroid (returned, compared by caller);
    (e) d-gon grouping in the rotating frame:
        u_{j + n/d}(t) = R((n/d) zeta) u_j(t).
    """
    res = path.resonance
    cfg_n = res.n
    pts = path.points
    closure = path.closure_gap
    bodies = path.body_paths
    nbodies = bodies.shape[0]
    ring = np.arange(nbodies - cfg_n, nbodies)  # ring rows, body j = index j+1
    ref_curve = bodies[ring[-1]]
    same = 0.0
    shifts = np.empty(cfg_n)
    for idx, row in enumerate(ring):
        j = idx + 1
        frac = (j * res.k_tilde) / (cfg_n * res.m)
        shifts[idx] = frac % 1.0
        expected = _circular_shift(ref_curve, frac)
        same = max(same, float(np.abs(bodies[row] - expected).max()))
    rot = rotation(-2.0 * math.pi * res.ell / res.m)
    shifted = _circular_shift(ref_curve, -1.0 / res.m)  # t -> t - T
    rotated = ref_curve.copy()
    rotated[:, :2] = ref_curve[:, :2] @ rot.T
    rotation_residual = float(np.abs(shifted - rotated).max())
    wind = winding_number(pts[:, :2])
    grouping = 0.0
    if path.rotating is not None and res.d >= 1:
        step = cfg_n // res.d
        if step and res.d > 1:
            rotg = rotation(step * 2.0 * math.pi / cfg_n)
            for idx in range(cfg_n):
                row = ring[idx]
                partner = ring[(idx + step) % cfg_n]
                expect = path.rotating[row].copy()
                expect[:, :2] = expect[:, :2] @ rotg.T
                # bodies j+step at equal times; wrap through the periodic grid
                got = path.rotating[partner]
                grouping = max(grouping, float(np.abs(got - expect).max()))
    return SymmetryReport(
        closure=closure,
        same_path=same,
        rotation_residual=rotation_residual,
        winding=wind,
        grouping=grouping,
        per_body_shift=shifts,
    )


def fit_torus(points: np.ndarray):
    """Least-squares torus of revolution about the z axis.

    Using (rho - R)^2 + z^2 = r^2 <=> rho^2 + z^2 = 2 rho R + (r^2 - R^2),
    linear in (R, c).  Returns (R, r, max_deviation).
    """
    rho = np.hypot(points[:, 0], points[:, 1])
    z = points[:, 2]
    A = np.column_stack([2.0 * rho, np.ones_like(rho)])
    b = rho**2 + z**2
    (R, c), *_ = np.linalg.lstsq(A, b, rcond=None)
    r_sq = c + R**2
    if r_sq <= 0.0:
        raise NotToroidal("degenerate torus fit (nonpositive minor radius)")
    r = math.sqrt(r_sq)
    dev = float(np.abs(np.hypot(rho - R, z) - r).max())
    return float(R), r, dev


def knot_type(path: ChoreographyPath) -> tuple[int, int]:
    """(longitudinal, meridional) winding pair of a toroidal closed path.

    Fits a torus of revolution (axis z, the symmetry axis of axial-family
    orbits), rejects the fit when the path strays more than 20% of the
    minor radius or is essentially planar, and counts both winding
    numbers by angle unwinding.  For an ell:m resonant axial orbit this
    returns (ell, m): the torus-knot type.
    """
    pts = path.points
    scale = float(np.abs(pts).max())
    if float(np.abs(pts[:, 2]).max()) < 1e-8 * max(scale, 1.0):
        raise NotToroidal("path is planar (zero minor-radius torus)")
    R, r, dev = fit_torus(pts)
    if dev > 0.2 * r:
        raise NotToroidal(
            f"path strays {dev:.3e} from the fitted torus (minor radius {r:.3e})"
        )
    longitude = winding_number(pts[:, :2], center=np.zeros(2))
    rho = np.hypot(pts[:, 0], pts[:, 1])
    mer = np.arctan2(pts[:, 2], rho - R)
    dmer = np.diff(np.concatenate([mer, mer[:1]]))
    dmer = (dmer + math.pi) % (2.0 * math.pi) - math.pi
    meridian = int(round(float(dmer.sum()) / (2.0 * math.pi)))
    return abs(longitude), abs(meridian)
