"""Linear modes of the polygonal equilibrium.

Planar modes are computed numerically from the equilibrium Jacobian and
classified by a wave number k via the discrete Fourier transform of the
eigenvector over the body index; vertical modes are analytic,
sqrt(mu + s_k) for k = 1..n-1 plus sqrt(mu + n) for k = n when a central
body is present.  A mode with wave number k seeds a family whose orbits
obey the traveling-wave symmetry u_j(t) = e^{i j zeta} u_n(t + j k zeta).

Modes whose frequency is not simple (clustered within CLUSTER_TOL, e.g.
the k and n-k vertical pair, or anything resonating with the triple
eigenvalue at the frame frequency) are reported but flagged degenerate;
the continuation driver refuses them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import AmbiguousMode
from .nbody import J2, PhasePoint, SystemConfig, polygon_equilibrium, s_coefficient

#: Frequencies closer than this are treated as one cluster (non-simple).
CLUSTER_TOL = 1e-8

#: Relative window around the frame frequency inside which numerically
#: split copies of the (defective) trivial eigenvalue are collected.
FRAME_CLUSTER_RTOL = 1e-6

#: Minimum fraction of DFT energy in the dominant wave number.
ENERGY_THRESHOLD = 0.99


@dataclass
class ModeRecord:
    """One oscillatory mode of the linearized system.

    ``eigenvector`` is complex over the full phase space; the real solution
    of the linear equations is Re(eigenvector * e^{i*frequency*t}).  It is
    normalized so the largest position displacement has magnitude 1 and the
    reference body's planar (or vertical) displacement is real positive.
    """

    frequency: float
    wave_number: int
    family_type: str  # "planar" | "vertical"
    eigenvector: np.ndarray
    config: SystemConfig
    degenerate: bool = False
    energy_fraction: float = 1.0

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.frequency


def equilibrium_jacobian(config: SystemConfig) -> np.ndarray:
    """Derivative of the zero-unfolding vector field at the polygon, (6nb)^2."""
    eq = polygon_equilibrium(config)
    nb = config.body_count
    a_px = kernels.accel_jac_pos_batch_numpy(
        eq.positions[None, :, :], config.masses(), config.frame_freq, 0.0
    )[0]
    d = 3 * nb
    jac = np.zeros((2 * d, 2 * d))
    jac[:d, d:] = np.eye(d)
    jac[d:, :d] = a_px
    w = config.frame_freq
    for b in range(nb):
        jac[d + 3 * b : d + 3 * b + 2, d + 3 * b : d + 3 * b + 2] = 2.0 * w * J2
    return jac


def _ring_complex_positions(w: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Complex planar displacement w_x + i w_y of each ring body."""
    rows = config.ring_rows()
    return w[3 * rows] + 1j * w[3 * rows + 1]


def _dft_dominant(values: np.ndarray, config: SystemConfig):
    """Dominant wave number of ring-indexed values c_j ~ e^{i j kappa zeta}."""
    n = config.n
    j = np.arange(1, n + 1)
    energy = np.abs(
        np.exp(-1j * np.outer(np.arange(n), j) * config.zeta) @ values
    ) ** 2
    total = energy.sum()
    if total <= 0.0:
        return 0, 0.0
    kappa = int(np.argmax(energy))
    return kappa, float(energy[kappa] / total)


def classify_wave_number(w: np.ndarray, config: SystemConfig, family_type: str):
    """Wave number k and dominant-energy fraction of a complex eigenvector.

    Planar eigenvectors for eigenvalue i*beta carry the phase
    e^{i j (k+1) zeta} on the scalar w_x + i w_y (the traveling-wave phase
    composed with the polygon's own phase e^{i j zeta}); the conjugate
    scalar carries e^{i j (1-k) zeta} and is used as a consistency check.
    Vertical eigenvectors carry e^{i j k zeta} on the z components directly.
    """
    if family_type == "vertical":
        rows = config.ring_rows()
        kappa, frac = _dft_dominant(w[3 * rows + 2], config)
        k = config.n if kappa == 0 else kappa
        return k, frac
    c = _ring_complex_positions(w, config)
    kappa, frac = _dft_dominant(c, config)
    rows = config.ring_rows()
    c_conj = np.conj(w[3 * rows]) + 1j * np.conj(w[3 * rows + 1])
    kappa2, frac2 = _dft_dominant(c_conj, config)
    k = (kappa - 1) % config.n
    k2 = (1 - kappa2) % config.n
    frac = min(frac, frac2)
    if k != k2:
        raise AmbiguousMode(
            f"wave-number classification disagrees: {k} vs {k2} "
            f"(energy fractions {frac:.4f}, {frac2:.4f})"
        )
    return k, frac


def _normalize_eigenvector(w: np.ndarray, config: SystemConfig, family_type: str) -> np.ndarray:
    nb = config.body_count
    pos = w[: 3 * nb]
    scale = np.abs(pos).max()
    w = w / scale
    ref = config.reference_index
    if family_type == "vertical":
        anchor = w[3 * ref + 2]
    else:
        anchor = w[3 * ref] + 1j * w[3 * ref + 1]
    if abs(anchor) > 1e-12:
        w = w * (abs(anchor) / anchor)
    return w


def _mark_degenerate(modes: list[ModeRecord], extra_freqs: np.ndarray) -> None:
    freqs = np.array([m.frequency for m in modes])
    all_freqs = np.concatenate([freqs, extra_freqs])
    for m in modes:
        close = np.abs(all_freqs - m.frequency) < CLUSTER_TOL
        if close.sum() > 1:
            m.degenerate = True


def planar_modes(config: SystemConfig) -> list[ModeRecord]:
    """Purely imaginary planar modes, classified by wave number.

    Eigenvalues within FRAME_CLUSTER_RTOL (relative) of the frame frequency
    belong to the trivial rotation-resonance cluster, which is defective and
    splits numerically; they are excluded from the report.  Returned modes
    are sorted by wave number, then frequency.
    """
    nb = config.body_count
    jac = equilibrium_jacobian(config)
    planar_ix = np.concatenate(
        [
            (3 * np.arange(nb)[:, None] + np.array([0, 1])[None, :]).ravel(),
            3 * nb + (3 * np.arange(nb)[:, None] + np.array([0, 1])[None, :]).ravel(),
        ]
    )
    sub = jac[np.ix_(planar_ix, planar_ix)]
    eigvals, eigvecs = np.linalg.eig(sub)
    w0 = config.frame_freq
    modes: list[ModeRecord] = []
    for lam, vec in zip(eigvals, eigvecs.T):
        beta = lam.imag
        if beta <= 1e-6 or abs(lam.real) > 1e-8:
            continue
        if abs(beta - w0) < FRAME_CLUSTER_RTOL * w0:
            continue
        full = np.zeros(6 * nb, dtype=complex)
        full[planar_ix] = vec
        k, frac = classify_wave_number(full, config, "planar")
        if frac < ENERGY_THRESHOLD:
            raise AmbiguousMode(
                f"dominant DFT energy {frac:.4f} below {ENERGY_THRESHOLD} "
                f"for planar eigenvalue {beta:.6f}i"
            )
        full = _normalize_eigenvector(full, config, "planar")
        modes.append(ModeRecord(float(beta), k, "planar", full, config, energy_fraction=frac))
    _mark_degenerate(modes, np.concatenate([_vertical_frequencies(config), [w0]]))
    modes.sort(key=lambda m: (m.wave_number, m.frequency))
    return modes


def _vertical_frequencies(config: SystemConfig) -> np.ndarray:
    """Analytic vertical spectrum sqrt(mu + s_k), plus sqrt(mu + n) if mu > 0."""
    freqs = [math.sqrt(config.mu + s_coefficient(config.n, k)) for k in range(1, config.n)]
    if config.has_central:
        freqs.append(math.sqrt(config.mu + config.n))
    return np.array(freqs)


def vertical_modes(config: SystemConfig) -> list[ModeRecord]:
    """Analytic vertical modes sqrt(mu + s_k), plus sqrt(mu + n) for mu > 0.

    The eigenvector of mode k has z_j = e^{i j k zeta} on the ring and zero
    planar components; for the k = n mode the central body moves opposite
    the ring with amplitude -n/mu.
    """
    nb = config.body_count
    modes: list[ModeRecord] = []
    jring = np.arange(1, config.n + 1)
    rows = config.ring_rows()
    ks = list(range(1, config.n)) + ([config.n] if config.has_central else [])
    for k in ks:
        if k == config.n:
            freq = math.sqrt(config.mu + config.n)
            zvals = np.ones(config.n, dtype=complex)
            z0 = -config.n / config.mu
        else:
            freq = math.sqrt(config.mu + s_coefficient(config.n, k))
            zvals = np.exp(1j * jring * k * config.zeta)
            z0 = 0.0
        w = np.zeros(6 * nb, dtype=complex)
        w[3 * rows + 2] = zvals
        w[3 * nb + 3 * rows + 2] = 1j * freq * zvals
        if config.has_central:
            w[2] = z0
            w[3 * nb + 2] = 1j * freq * z0
        w = _normalize_eigenvector(w, config, "vertical")
        modes.append(ModeRecord(freq, k, "vertical", w, config))
    planar = [m.frequency for m in planar_modes(config)]
    _mark_degenerate(modes, np.array(planar + [config.frame_freq]))
    modes.sort(key=lambda m: (m.wave_number, m.frequency))
    return modes


def all_modes(config: SystemConfig) -> list[ModeRecord]:
    return planar_modes(config) + vertical_modes(config)


def select_mode(config: SystemConfig, family_type: str, k: int, which: int = 0) -> ModeRecord:
    """Pick the ``which``-th mode (by descending frequency) with given type and k."""
    pool = planar_modes(config) if family_type == "planar" else vertical_modes(config)
    matches = sorted(
        (m for m in pool if m.wave_number == k), key=lambda m: -m.frequency
    )
    if not matches:
        raise LookupError(f"no {family_type} mode with k={k} for n={config.n}")
    if which >= len(matches):
        raise LookupError(
            f"only {len(matches)} {family_type} mode(s) with k={k}, asked for #{which}"
        )
    return matches[which]


def mode_displacement(mode: ModeRecord, amplitude: float, tau: np.ndarray) -> np.ndarray:
    """Linear-ansatz displacement amplitude*Re(w e^{2 pi i tau}) at unit-period
    phases tau; shape (len(tau), 6 nb)."""
    phase = np.exp(2j * math.pi * np.asarray(tau))
    return amplitude * np.real(phase[:, None] * mode.eigenvector[None, :])


def lyapunov_predictor(
    mode: ModeRecord,
    amplitude: float,
    config: SystemConfig,
    n_intervals: int = 100,
    degree: int = 4,
):
    """Initial orbit guess for a family emanating from ``mode``.

    Returns ``(orbit_guess, period_guess)`` with the guess represented on a
    uniform collocation mesh; period_guess = 2*pi/frequency and all
    unfolding parameters zero.
    """
    from .bvp import Mesh, OrbitSolution  # local import to avoid a cycle

    if mode.frequency <= 0.0:
        raise ValueError("mode frequency must be positive")
    mesh = Mesh(np.linspace(0.0, 1.0, n_intervals + 1), degree)
    tau = mesh.node_times()
    eq = polygon_equilibrium(config).as_vector()
    values = eq[None, :] + mode_displacement(mode, amplitude, tau)
    period = mode.period
    orbit = OrbitSolution(
        mesh=mesh,
        values=values,
        period=period,
        lambdas=np.zeros(3),
        config=config,
        wave_number=mode.wave_number,
        family=mode.family_type,
    )
    return orbit, period
